"""Vocabulary modification: choose n-tokens by savings score and recycle rare token ids."""

from __future__ import annotations

import enum
import hashlib
import heapq
import json
import warnings
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CapacityError, DataError, IntegrityError, ParameterError, ProvenanceError
from .miner import CandidateTable, NToken
from .tokenizer import TokenizerDef


class ScoringMode(str, enum.Enum):
    ALGORITHM1 = "algorithm1"  # weight = len(t)
    FOOTNOTE = "footnote"  # weight = len(t) - 1, the true per-occurrence saving


class SelectionMode(str, enum.Enum):
    OVERLAP_AWARE = "overlap_aware"
    NAIVE_GREEDY = "naive_greedy"


class TruncatedSelectionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ScoreUpdate:
    iteration: int
    picked: NToken
    affected: NToken
    before: int
    after: int


@dataclass
class Selection:
    requested: int
    ntokens: list[NToken]
    cids: list[int]
    picked_scores: list[int]
    scores: np.ndarray  # final score per candidate id
    updates: list[ScoreUpdate] = field(default_factory=list)

    @property
    def truncated(self) -> bool:
        return len(self.ntokens) < self.requested


def _weights(lengths: np.ndarray, scoring: ScoringMode) -> np.ndarray:
    return lengths - 1 if scoring == ScoringMode.FOOTNOTE else lengths.copy()


def tie_rank(table: CandidateTable) -> np.ndarray:
    """Static tie-break rank: higher frequency, then shorter, then smaller base ids."""
    keys = [table.ids[:, j] for j in range(table.n_max - 1, -1, -1)]
    order = np.lexsort([*keys, table.lengths, -table.counts])
    rank = np.empty(len(order), np.int64)
    rank[order] = np.arange(len(order))
    return rank


def select_n_tokens(
    table: CandidateTable,
    m: int,
    mode: SelectionMode | str = SelectionMode.OVERLAP_AWARE,
    scoring: ScoringMode | str = ScoringMode.ALGORITHM1,
    *,
    debit_length: str = "affected",
    trace: bool = False,
) -> Selection:
    """Pick up to ``m`` candidates by repeated argmax of the savings score.

    In overlap-aware mode each pick debits every overlapping candidate by
    ``overlap count x weight``; the weight uses the affected candidate's length
    (``debit_length="picked"`` uses the picked one's instead). Only strictly
    positive scores are ever picked; if fewer than ``m`` remain the selection
    is truncated with a :class:`TruncatedSelectionWarning`.
    """
    mode = SelectionMode(mode)
    scoring = ScoringMode(scoring)
    if m <= 0:
        raise ParameterError(f"m must be >= 1, got {m}")
    if debit_length not in ("affected", "picked"):
        raise ParameterError(f"debit_length must be 'affected' or 'picked', got {debit_length!r}")
    if len(table) == 0:
        raise ParameterError("candidate table is empty")

    weight = _weights(table.lengths, scoring)
    scores = table.counts * weight
    rank = tie_rank(table)
    picked = np.zeros(len(table), bool)
    heap = [(-int(s), int(r), c) for c, (s, r) in enumerate(zip(scores, rank))]
    heapq.heapify(heap)

    cids: list[int] = []
    picked_scores: list[int] = []
    updates: list[ScoreUpdate] = []
    while len(cids) < m and heap:
        neg, r, c = heapq.heappop(heap)
        if picked[c]:
            continue
        if -neg != scores[c]:
            # stale entry; scores only fall, so re-queue at the current value
            heapq.heappush(heap, (-int(scores[c]), r, c))
            continue
        if scores[c] <= 0:
            break
        picked[c] = True
        cids.append(c)
        picked_scores.append(int(scores[c]))
        if mode == SelectionMode.OVERLAP_AWARE:
            cols, vals = table.row(c)
            live = ~picked[cols]
            cols, vals = cols[live], vals[live]
            if debit_length == "picked":
                debit = vals * weight[c]
            else:
                debit = vals * weight[cols]
            if trace:
                for j, dv in zip(cols, debit):
                    before = int(scores[j])
                    updates.append(
                        ScoreUpdate(
                            len(cids), table.ntoken(c), table.ntoken(int(j)), before, before - int(dv)
                        )
                    )
            scores[cols] -= debit

    if len(cids) < m:
        warnings.warn(
            f"only {len(cids)} candidates with positive score; patch truncated from {m}",
            TruncatedSelectionWarning,
            stacklevel=2,
        )
    return Selection(
        requested=m,
        ntokens=[table.ntoken(c) for c in cids],
        cids=cids,
        picked_scores=picked_scores,
        scores=scores,
        updates=updates,
    )


def removable_pool(tok: TokenizerDef) -> list[int]:
    return [i for i in tok.id_to_token if i not in tok.specials and i not in tok.atomic]


def pick_removable(
    tok: TokenizerDef,
    old_freq: Mapping[int, int],
    m: int,
    exclude=frozenset(),
) -> list[int]:
    """The ``m`` lowest-frequency removable ids (non-special, non-atomic).

    Ties go to the higher id first, then to the smaller surface.
    """
    if m < 1:
        raise ParameterError(f"m must be >= 1, got {m}")
    pool = [i for i in removable_pool(tok) if i not in exclude]
    if len(pool) < m:
        raise CapacityError(
            f"only {len(pool)} removable tokens; the maximum feasible m is {len(pool)}"
        )
    pool.sort(key=lambda i: (old_freq.get(i, 0), -i, tok.surface(i)))
    return pool[:m]


@dataclass(frozen=True)
class VocabPatch:
    n_max: int
    scoring_mode: str
    selection_mode: str
    removed: tuple[int, ...]
    added: tuple[tuple[int, NToken], ...]
    tokenizer_sha256: str = ""
    corpus_sha256: str = ""
    config: dict | None = None

    @classmethod
    def identity(cls, tok: TokenizerDef, n_max: int = 2) -> VocabPatch:
        return cls(
            n_max,
            ScoringMode.ALGORITHM1.value,
            SelectionMode.OVERLAP_AWARE.value,
            (),
            (),
            tok.fingerprint(),
        )

    def __len__(self) -> int:
        return len(self.added)

    def to_dict(self) -> dict:
        d = {
            "n_max": self.n_max,
            "scoring_mode": self.scoring_mode,
            "selection_mode": self.selection_mode,
            "removed": list(self.removed),
            "added": [
                {"id": i, "base_ids": list(nt.base_ids), "surface": nt.surface}
                for i, nt in self.added
            ],
            "source": {
                "tokenizer_sha256": self.tokenizer_sha256,
                "corpus_sha256": self.corpus_sha256,
            },
        }
        if self.config is not None:
            d["config"] = self.config
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=1) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_dict(cls, d: Mapping) -> VocabPatch:
        try:
            return cls(
                n_max=int(d["n_max"]),
                scoring_mode=ScoringMode(d["scoring_mode"]).value,
                selection_mode=SelectionMode(d["selection_mode"]).value,
                removed=tuple(int(i) for i in d["removed"]),
                added=tuple(
                    (int(a["id"]), NToken(tuple(int(x) for x in a["base_ids"]), a.get("surface", "")))
                    for a in d["added"]
                ),
                tokenizer_sha256=d["source"]["tokenizer_sha256"],
                corpus_sha256=d["source"]["corpus_sha256"],
                config=d.get("config"),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"malformed vocab patch: {e!r}") from e

    @classmethod
    def load(cls, path: str | Path) -> VocabPatch:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise DataError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
        return cls.from_dict(data)

    def validate(self, tok: TokenizerDef, *, check_source: bool = True) -> None:
        if check_source and self.tokenizer_sha256 and self.tokenizer_sha256 != tok.fingerprint():
            raise ProvenanceError("patch was built for a different tokenizer")
        if len(self.removed) != len(self.added):
            raise IntegrityError("removed and added lists differ in length")
        if len(set(self.removed)) != len(self.removed):
            raise IntegrityError("duplicate removed id")
        removed = set(self.removed)
        seen = set()
        for n, (rid, (aid, nt)) in enumerate(zip(self.removed, self.added)):
            if rid != aid:
                raise IntegrityError(f"added[{n}] has id {aid} but removed[{n}] is {rid}")
            if rid not in tok.id_to_token:
                raise IntegrityError(f"removed id {rid} not in vocab")
            if rid in tok.specials or rid in tok.atomic:
                raise IntegrityError(f"removed id {rid} is special or atomic")
            if len(nt) < 2:
                raise IntegrityError(f"added[{n}] has fewer than two base ids")
            if len(nt) > self.n_max:
                raise IntegrityError(f"added[{n}] is longer than n_max={self.n_max}")
            if nt.base_ids in seen:
                raise IntegrityError(f"added[{n}] duplicates an earlier n-token")
            seen.add(nt.base_ids)
            for b in nt.base_ids:
                if b not in tok.id_to_token or b in tok.specials:
                    raise IntegrityError(f"added[{n}] uses invalid base id {b}")
                if b in removed:
                    raise IntegrityError(f"added[{n}] uses removed base id {b}")


def build_patch(
    tok: TokenizerDef,
    table: CandidateTable,
    m: int,
    mode: SelectionMode | str = SelectionMode.OVERLAP_AWARE,
    scoring: ScoringMode | str = ScoringMode.ALGORITHM1,
    *,
    debit_length: str = "affected",
    config: dict | None = None,
) -> VocabPatch:
    """Select n-tokens, pair them with recycled ids and return a validated patch.

    A token that is a constituent of any selected n-token is never removed; the
    next-rarest token is taken instead.
    """
    if m <= 0:
        raise ParameterError(f"m must be >= 1, got {m}")
    if table.tokenizer_sha256 and table.tokenizer_sha256 != tok.fingerprint():
        raise ProvenanceError("candidate table was mined with a different tokenizer")
    pool = len(removable_pool(tok))
    if pool < m:
        raise CapacityError(f"only {pool} removable tokens; the maximum feasible m is {pool}")
    sel = select_n_tokens(table, m, mode, scoring, debit_length=debit_length)
    if not sel.ntokens:
        raise DataError("no candidate has a positive savings score")
    constituents = {b for nt in sel.ntokens for b in nt.base_ids}
    removed = pick_removable(tok, table.old_token_freq, len(sel.ntokens), exclude=constituents)
    added = tuple(
        (rid, NToken(nt.base_ids, nt.surface or "".join(tok.surface(i) for i in nt.base_ids)))
        for rid, nt in zip(removed, sel.ntokens)
    )
    patch = VocabPatch(
        n_max=table.n_max,
        scoring_mode=ScoringMode(scoring).value,
        selection_mode=SelectionMode(mode).value,
        removed=tuple(removed),
        added=added,
        tokenizer_sha256=tok.fingerprint(),
        corpus_sha256=table.corpus_sha256,
        config=config,
    )
    patch.validate(tok)
    return patch
