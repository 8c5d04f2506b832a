"""BPE tokenizer definition, base encoding/decoding and merge-rule decomposition."""

from __future__ import annotations

import enum
import hashlib
import json
import re
from collections.abc import Container, Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    DecodingError,
    DecompositionError,
    EncodingError,
    IntegrityError,
    TokenizerParseError,
)

DEFAULT_MARKER = "\u0120"  # "Ġ"


class Provenance(str, enum.Enum):
    BASE = "base"
    DECOMPOSED = "decomposed"
    PATCHED = "patched"


@dataclass(frozen=True)
class TokenSeq:
    ids: tuple[int, ...]
    provenance: Provenance = Provenance.BASE

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


class TokenizerDef:
    """An immutable BPE tokenizer: vocabulary, ranked merges, boundary marker, specials.

    All structural invariants are checked on construction; in particular every
    composite token has exactly one producing merge, so decomposition is unique.
    """

    def __init__(
        self,
        vocab: Mapping[str, int],
        merges: Sequence[tuple[str, str]],
        word_boundary_marker: str = DEFAULT_MARKER,
        specials: Iterable[int] = (),
    ):
        if not word_boundary_marker:
            raise IntegrityError("word_boundary_marker must be a non-empty string")
        self.vocab: dict[str, int] = dict(vocab)
        self.merges: tuple[tuple[str, str], ...] = tuple((a, b) for a, b in merges)
        self.word_boundary_marker = word_boundary_marker
        self.specials: frozenset[int] = frozenset(specials)

        self.id_to_token: dict[int, str] = {}
        for surface, idx in self.vocab.items():
            if idx in self.id_to_token:
                raise IntegrityError(
                    f"duplicate id {idx}: {self.id_to_token[idx]!r} and {surface!r}"
                )
            self.id_to_token[idx] = surface

        for sid in sorted(self.specials):
            if sid not in self.id_to_token:
                raise IntegrityError(f"special id {sid} is not in vocab")

        self.merge_ranks: dict[tuple[str, str], int] = {}
        # composite id -> (left id, right id)
        self.merge_table: dict[int, tuple[int, int]] = {}
        for rank, (left, right) in enumerate(self.merges):
            where = f"merges[{rank}] ({left!r}, {right!r})"
            if (left, right) in self.merge_ranks:
                raise IntegrityError(f"{where}: duplicate merge rule")
            for part in (left, right):
                if part not in self.vocab:
                    raise IntegrityError(f"{where}: operand {part!r} not in vocab")
            out = left + right
            if out not in self.vocab:
                raise IntegrityError(f"{where}: output {out!r} not in vocab")
            out_id = self.vocab[out]
            if {self.vocab[left], self.vocab[right], out_id} & self.specials:
                raise IntegrityError(f"{where}: special tokens cannot take part in merges")
            if out_id in self.merge_table:
                prev = self.merge_table[out_id]
                raise IntegrityError(
                    f"{where}: {out!r} already produced by "
                    f"({self.id_to_token[prev[0]]!r}, {self.id_to_token[prev[1]]!r})"
                )
            self.merge_ranks[(left, right)] = rank
            self.merge_table[out_id] = (self.vocab[left], self.vocab[right])

        self.atomic: frozenset[int] = frozenset(
            i for i in self.id_to_token if i not in self.merge_table and i not in self.specials
        )
        for i in sorted(self.atomic):
            surface = self.id_to_token[i]
            if len(surface) != 1 and surface != word_boundary_marker:
                raise IntegrityError(
                    f"token {surface!r} (id {i}) has several characters but no producing merge"
                )

        self._special_surfaces = {self.id_to_token[i]: i for i in self.specials}
        self._special_re = (
            re.compile(
                "|".join(
                    re.escape(s) for s in sorted(self._special_surfaces, key=len, reverse=True)
                )
            )
            if self._special_surfaces
            else None
        )
        m = re.escape(word_boundary_marker)
        self._piece_re = re.compile(rf"(?:{m})?(?:(?!{m})\S)+|{m}|\s")
        self._cache: dict[str, tuple[int, ...]] = {}
        self._fingerprint: str | None = None

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "vocab": {self.id_to_token[i]: i for i in sorted(self.id_to_token)},
            "merges": [[a, b] for a, b in self.merges],
            "word_boundary_marker": self.word_boundary_marker,
            "specials": sorted(self.specials),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=1) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    def fingerprint(self) -> str:
        """SHA-256 of the canonical serialization (independent of file formatting)."""
        if self._fingerprint is None:
            canon = json.dumps(self.to_dict(), ensure_ascii=False, separators=(",", ":"))
            self._fingerprint = hashlib.sha256(canon.encode("utf-8")).hexdigest()
        return self._fingerprint

    def __len__(self) -> int:
        return len(self.vocab)

    def __getstate__(self):
        return self.to_dict()

    def __setstate__(self, state):
        self.__init__(
            state["vocab"],
            [tuple(m) for m in state["merges"]],
            state["word_boundary_marker"],
            state["specials"],
        )

    # -- encoding ----------------------------------------------------------

    def pieces(self, text: str) -> list[tuple[str, bool]]:
        """Split text into (piece, is_special) pre-tokens.

        Special-token surfaces are matched literally first; every other space is
        folded into the boundary marker, and each non-space whitespace character
        becomes its own pre-token.
        """
        marker = self.word_boundary_marker
        out: list[tuple[str, bool]] = []
        pos = 0
        segments: list[tuple[int, int, bool]] = []
        if self._special_re is not None:
            for m in self._special_re.finditer(text):
                if m.start() > pos:
                    segments.append((pos, m.start(), False))
                segments.append((m.start(), m.end(), True))
                pos = m.end()
        if pos < len(text):
            segments.append((pos, len(text), False))

        for start, end, special in segments:
            seg = text[start:end]
            if special:
                out.append((seg, True))
                continue
            hit = seg.find(marker)
            if hit >= 0:
                self._raise_unencodable(text, start + hit, "boundary marker in raw text")
            bad = [
                ch
                for ch in set(seg) - {" "}
                if ch not in self.vocab or self.vocab[ch] not in self.atomic
            ]
            if bad:
                first = min(seg.index(ch) for ch in bad)
                self._raise_unencodable(text, start + first, "no atomic token")
            if " " in seg and marker not in self.vocab:
                self._raise_unencodable(text, start + seg.index(" "), "marker not in vocab")
            out.extend((p, False) for p in self._piece_re.findall(seg.replace(" ", marker)))
        return out

    @staticmethod
    def _raise_unencodable(text: str, index: int, why: str):
        offset = len(text[:index].encode("utf-8"))
        raise EncodingError(
            f"cannot encode character {text[index]!r} at byte offset {offset}: {why}"
        )

    def encode_piece(self, piece: str) -> tuple[int, ...]:
        cached = self._cache.get(piece)
        if cached is not None:
            return cached
        marker = self.word_boundary_marker
        if piece.startswith(marker):
            symbols = [marker, *piece[len(marker):]]
        else:
            symbols = list(piece)
        ranks = self.merge_ranks
        while len(symbols) > 1:
            best_rank = None
            best_at = -1
            for i in range(len(symbols) - 1):
                r = ranks.get((symbols[i], symbols[i + 1]))
                if r is not None and (best_rank is None or r < best_rank):
                    best_rank, best_at = r, i
            if best_rank is None:
                break
            symbols[best_at : best_at + 2] = [symbols[best_at] + symbols[best_at + 1]]
        ids = tuple(self.vocab[s] for s in symbols)
        self._cache[piece] = ids
        return ids

    def encode_pieces(self, text: str) -> list[tuple[int, ...]]:
        """Encode text as one id-tuple per pre-token (specials are 1-tuples)."""
        return [
            (self._special_surfaces[p],) if special else self.encode_piece(p)
            for p, special in self.pieces(text)
        ]

    def encode(self, text: str) -> list[int]:
        return [i for piece in self.encode_pieces(text) for i in piece]

    def decode(self, ids: Iterable[int]) -> str:
        parts = []
        for n, i in enumerate(ids):
            try:
                parts.append(self.id_to_token[i])
            except (KeyError, TypeError):
                raise DecodingError(f"unknown token id {i!r} at index {n}") from None
        return "".join(parts).replace(self.word_boundary_marker, " ")

    def surface(self, idx: int) -> str:
        return self.id_to_token[idx]

    def decompose(self, idx: int, keep: Container) -> list[int]:
        """Split ``idx`` along its merge rules until every piece is in ``keep``."""
        if idx not in self.id_to_token:
            raise DecompositionError(f"unknown token id {idx}")
        out: list[int] = []
        stack = [idx]
        while stack:
            t = stack.pop()
            if t in keep:
                out.append(t)
                continue
            children = self.merge_table.get(t)
            if children is None:
                raise DecompositionError(
                    f"token {self.id_to_token[t]!r} (id {t}) is not kept and has no "
                    "producing merge; atomic tokens cannot be removed"
                )
            stack.append(children[1])
            stack.append(children[0])
        return out


def _pairs_hook(pairs):
    seen: dict = {}
    for k, v in pairs:
        if k in seen:
            raise IntegrityError(f"duplicate key {k!r}")
        seen[k] = v
    return seen


def tokenizer_from_dict(data: Mapping, source: str = "<dict>") -> TokenizerDef:
    if not isinstance(data, Mapping):
        raise TokenizerParseError(f"{source}: top level must be an object")
    vocab = data.get("vocab")
    if not isinstance(vocab, Mapping):
        raise TokenizerParseError(f"{source}: field 'vocab' must be an object")
    for surface, idx in vocab.items():
        if isinstance(idx, bool) or not isinstance(idx, int) or idx < 0:
            raise TokenizerParseError(
                f"{source}: vocab[{surface!r}] must be a non-negative integer, got {idx!r}"
            )
    raw_merges = data.get("merges", [])
    if not isinstance(raw_merges, list):
        raise TokenizerParseError(f"{source}: field 'merges' must be an array")
    merges = []
    for n, m in enumerate(raw_merges):
        if isinstance(m, str):
            parts = m.split(" ")
        else:
            parts = m
        if (
            not isinstance(parts, (list, tuple))
            or len(parts) != 2
            or not all(isinstance(p, str) and p for p in parts)
        ):
            raise TokenizerParseError(f"{source}: merges[{n}] must be two non-empty strings")
        merges.append((parts[0], parts[1]))
    marker = data.get("word_boundary_marker", DEFAULT_MARKER)
    if not isinstance(marker, str):
        raise TokenizerParseError(f"{source}: field 'word_boundary_marker' must be a string")
    specials = data.get("specials", [])
    if not isinstance(specials, list) or not all(
        isinstance(s, int) and not isinstance(s, bool) for s in specials
    ):
        raise TokenizerParseError(f"{source}: field 'specials' must be an array of integers")
    return TokenizerDef(vocab, merges, marker, specials)


def load_tokenizer(path: str | Path) -> TokenizerDef:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise TokenizerParseError(f"{path}: not valid UTF-8 ({e})") from e
    try:
        data = json.loads(text, object_pairs_hook=_pairs_hook)
    except json.JSONDecodeError as e:
        raise TokenizerParseError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    except IntegrityError as e:
        raise IntegrityError(f"{path}: {e}") from e
    return tokenizer_from_dict(data, str(path))


def encode_base(text: str, tok: TokenizerDef) -> TokenSeq:
    return TokenSeq(tuple(tok.encode(text)), Provenance.BASE)


def decode_base(seq: TokenSeq | Sequence[int], tok: TokenizerDef) -> str:
    ids = seq.ids if isinstance(seq, TokenSeq) else seq
    return tok.decode(ids)


def decompose(idx: int, keep: Container, tok: TokenizerDef) -> TokenSeq:
    return TokenSeq(tuple(tok.decompose(idx, keep)), Provenance.DECOMPOSED)
