"""Encoding and decoding under a patched vocabulary.

Encoding runs in three stages: base BPE encoding, decomposition of removed
tokens along their merge rules, then a left-to-right scan that replaces each
span with the longest matching n-token. ``segment_optimal`` swaps the scan for
a dynamic program that minimizes the unit count.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field

from .corpus import Corpus, EncodedDoc, encode_corpus
from .errors import DecodingError, ParameterError
from .selection import VocabPatch
from .tokenizer import Provenance, TokenizerDef, TokenSeq


class PatchedVocab:
    def __init__(self, base: TokenizerDef, patch: VocabPatch, *, check_source: bool = True):
        patch.validate(base, check_source=check_source)
        self.base = base
        self.patch = patch
        removed = frozenset(patch.removed)
        self.keep: frozenset[int] = frozenset(base.id_to_token) - removed
        self.lookup: dict[tuple[int, ...], int] = {(i,): i for i in self.keep}
        self.expansion: dict[int, tuple[int, ...]] = {}
        # first base id -> longest n-token starting with it
        self._reach: dict[int, int] = {}
        for uid, nt in patch.added:
            self.lookup[nt.base_ids] = uid
            self.expansion[uid] = nt.base_ids
            first = nt.base_ids[0]
            self._reach[first] = max(self._reach.get(first, 1), len(nt))
        self.max_len = max((len(k) for k in self.lookup), default=1)
        self._decomp = {r: tuple(base.decompose(r, self.keep)) for r in removed}

    @property
    def specials(self) -> frozenset[int]:
        return self.base.specials

    def decompose_ids(self, ids: Iterable[int]) -> list[int]:
        out: list[int] = []
        decomp = self._decomp
        for t in ids:
            d = decomp.get(t)
            if d is None:
                out.append(t)
            else:
                out.extend(d)
        return out

    def segment_greedy(self, ids: Sequence[int]) -> list[int]:
        lookup, reach = self.lookup, self._reach
        n = len(ids)
        out: list[int] = []
        i = 0
        while i < n:
            first = ids[i]
            longest = reach.get(first, 1)
            step = 1
            unit = first
            for k in range(min(longest, n - i), 1, -1):
                u = lookup.get(tuple(ids[i : i + k]))
                if u is not None:
                    unit, step = u, k
                    break
            out.append(unit)
            i += step
        return out

    def segment_optimal(self, ids: Sequence[int]) -> list[int]:
        """Minimum-unit segmentation; among minima the longest first unit wins
        at every position (leftmost-longest)."""
        lookup, reach = self.lookup, self._reach
        n = len(ids)
        best = [0] * (n + 1)
        for i in range(n - 1, -1, -1):
            b = best[i + 1] + 1
            for k in range(2, min(reach.get(ids[i], 1), n - i) + 1):
                if best[i + k] + 1 < b and tuple(ids[i : i + k]) in lookup:
                    b = best[i + k] + 1
            best[i] = b
        out: list[int] = []
        i = 0
        while i < n:
            for k in range(min(reach.get(ids[i], 1), n - i), 0, -1):
                if best[i + k] + 1 == best[i]:
                    u = lookup.get(tuple(ids[i : i + k]))
                    if u is not None:
                        out.append(u)
                        i += k
                        break
        return out

    def patch_ids(self, base_ids: Sequence[int], *, optimal: bool = False) -> list[int]:
        ids = self.decompose_ids(base_ids)
        return self.segment_optimal(ids) if optimal else self.segment_greedy(ids)

    def encode(self, text: str, *, optimal: bool = False) -> list[int]:
        return self.patch_ids(self.base.encode(text), optimal=optimal)

    def expand(self, units: Iterable[int]) -> list[int]:
        out: list[int] = []
        for n, u in enumerate(units):
            exp = self.expansion.get(u)
            if exp is not None:
                out.extend(exp)
            elif u in self.keep:
                out.append(u)
            else:
                raise DecodingError(f"unknown unit id {u!r} at index {n}")
        return out

    def decode(self, units: Iterable[int]) -> str:
        return self.base.decode(self.expand(units))

    def unit_surface(self, u: int) -> str:
        return "".join(self.base.surface(i) for i in self.expand([u]))

    def count_units(self, units: Iterable[int]) -> int:
        specials = self.base.specials
        return sum(1 for u in units if u not in specials)


def encode_patched(text: str, pv: PatchedVocab) -> TokenSeq:
    return TokenSeq(tuple(pv.encode(text)), Provenance.PATCHED)


def encode_patched_optimal(text: str, pv: PatchedVocab) -> TokenSeq:
    return TokenSeq(tuple(pv.encode(text, optimal=True)), Provenance.PATCHED)


def decode_patched(seq: TokenSeq | Sequence[int], pv: PatchedVocab) -> str:
    return pv.decode(seq.ids if isinstance(seq, TokenSeq) else seq)


def _pct(base: int, patched: int) -> float:
    return 100.0 * (base - patched) / base if base else 0.0


@dataclass
class DocSavings:
    doc_id: str
    base_tokens: int
    greedy_tokens: int
    optimal_tokens: int


@dataclass
class SavingsReport:
    split: str
    docs: int
    base_tokens: int
    greedy_tokens: int
    optimal_tokens: int
    greedy_savings_pct: float
    optimal_savings_pct: float
    per_doc: list[DocSavings] | None = field(default=None)
    config: dict | None = field(default=None)

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.per_doc is None:
            d.pop("per_doc")
        if self.config is None:
            d.pop("config")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=1) + "\n"


def measure_ids(
    docs: Sequence[Sequence[int] | TokenSeq],
    pv: PatchedVocab,
    *,
    split: str = "train",
    doc_ids: Sequence[str] | None = None,
    optimal: bool = True,
    per_doc: bool = False,
) -> SavingsReport:
    """Savings of the patched encoders over already base-encoded documents."""
    if not docs:
        raise ParameterError("cannot measure savings on an empty corpus")
    base_total = greedy_total = optimal_total = 0
    rows = []
    for n, doc in enumerate(docs):
        ids = doc.ids if isinstance(doc, TokenSeq) else doc
        decomposed = pv.decompose_ids(ids)
        b = pv.count_units(ids)
        g = pv.count_units(pv.segment_greedy(decomposed))
        o = pv.count_units(pv.segment_optimal(decomposed)) if optimal else g
        base_total += b
        greedy_total += g
        optimal_total += o
        if per_doc:
            rows.append(DocSavings(doc_ids[n] if doc_ids else str(n), b, g, o))
    return SavingsReport(
        split=split,
        docs=len(docs),
        base_tokens=base_total,
        greedy_tokens=greedy_total,
        optimal_tokens=optimal_total,
        greedy_savings_pct=_pct(base_total, greedy_total),
        optimal_savings_pct=_pct(base_total, optimal_total),
        per_doc=rows if per_doc else None,
    )


def measure_savings(
    corpus: Corpus,
    pv: PatchedVocab,
    *,
    per_doc: bool = False,
    threads: int = 1,
    encoded: Sequence[EncodedDoc] | None = None,
) -> SavingsReport:
    if len(corpus) == 0:
        raise ParameterError("cannot measure savings on an empty corpus")
    if encoded is None:
        encoded = encode_corpus(pv.base, corpus.texts(), threads)
    return measure_ids(
        encoded,
        pv,
        split=corpus.split,
        doc_ids=[d.doc_id for d in corpus.documents],
        per_doc=per_doc,
    )
