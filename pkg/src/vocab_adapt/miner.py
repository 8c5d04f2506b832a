"""Candidate n-token mining: window frequencies and pairwise occurrence overlaps.

Two routes compute the same numbers. ``prepare_n_tokens`` / ``count_freqs`` /
``count_overlaps`` are direct dictionary-based passes, handy for small inputs
and for merging shard counts. ``mine`` is the vectorized corpus-scale path that
builds a :class:`CandidateTable`; the test-suite checks both against a brute
force enumeration.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from collections.abc import Collection, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ParameterError
from .tokenizer import TokenizerDef, TokenSeq

DEFAULT_MIN_FREQ = 2


@dataclass(frozen=True)
class NToken:
    """A contiguous run of base token ids; equality and hashing use ``base_ids`` only."""

    base_ids: tuple[int, ...]
    surface: str = field(default="", compare=False)

    def __post_init__(self):
        if len(self.base_ids) < 1:
            raise ParameterError("an n-token needs at least one base id")

    def __len__(self) -> int:
        return len(self.base_ids)


def make_ntoken(base_ids: Iterable[int], tok: TokenizerDef | None = None) -> NToken:
    ids = tuple(int(i) for i in base_ids)
    surface = "".join(tok.surface(i) for i in ids) if tok is not None else ""
    return NToken(ids, surface)


def _ids(doc) -> Sequence[int]:
    return doc.ids if isinstance(doc, TokenSeq) else doc


def _starts(doc, words_only: bool):
    if not words_only:
        return None
    starts = getattr(doc, "word_starts", None)
    if not starts and len(_ids(doc)):
        raise ParameterError("words_only needs documents carrying word_starts")
    return starts


def _specials(tok: TokenizerDef | None, specials: Collection[int] | None) -> frozenset[int]:
    if specials is not None:
        return frozenset(specials)
    return tok.specials if tok is not None else frozenset()


def _windows(doc, k: int, specials: frozenset[int], words_only: bool):
    ids = _ids(doc)
    starts = _starts(doc, words_only)
    for i in range(len(ids) - k + 1):
        w = tuple(ids[i : i + k])
        if specials and not specials.isdisjoint(w):
            continue
        if starts is not None and any(starts[i + 1 : i + k]):
            continue
        yield i, w


def count_windows(
    corpus_tok: Iterable,
    n_max: int,
    *,
    words_only: bool = False,
    specials: Collection[int] = (),
) -> Counter:
    """Raw counts of every admissible window of length 2..n_max.

    Count maps from disjoint document shards add up to the single-pass map.
    """
    if n_max < 2:
        raise ParameterError(f"n_max must be >= 2, got {n_max}")
    specials = frozenset(specials)
    counts: Counter = Counter()
    for doc in corpus_tok:
        for k in range(2, n_max + 1):
            counts.update(w for _, w in _windows(doc, k, specials, words_only))
    return counts


def prepare_n_tokens(
    corpus_tok: Iterable,
    n_max: int,
    min_freq: int = DEFAULT_MIN_FREQ,
    *,
    words_only: bool = False,
    tok: TokenizerDef | None = None,
    specials: Collection[int] | None = None,
) -> set[NToken]:
    if min_freq < 1:
        raise ParameterError(f"min_freq must be >= 1, got {min_freq}")
    counts = count_windows(
        corpus_tok, n_max, words_only=words_only, specials=_specials(tok, specials)
    )
    return {make_ntoken(w, tok) for w, c in counts.items() if c >= min_freq}


def count_freqs(
    corpus_tok: Iterable,
    candidates: Collection[NToken],
    *,
    words_only: bool = False,
    specials: Collection[int] = (),
) -> dict[NToken, int]:
    by_ids = {t.base_ids: t for t in candidates}
    lengths = sorted({len(t) for t in candidates})
    specials = frozenset(specials)
    out: Counter = Counter()
    for doc in corpus_tok:
        for k in lengths:
            for _, w in _windows(doc, k, specials, words_only):
                t = by_ids.get(w)
                if t is not None:
                    out[t] += 1
    return dict(out)


def count_overlaps(
    corpus_tok: Iterable,
    candidates: Collection[NToken],
    *,
    words_only: bool = False,
    specials: Collection[int] = (),
) -> dict[tuple[NToken, NToken], int]:
    """Number of intersecting occurrence pairs for every pair of candidates.

    Stored in both orientations. A diagonal entry ``(t, t)`` counts unordered
    pairs of distinct, intersecting occurrences of ``t``.
    """
    by_ids = {t.base_ids: t for t in candidates}
    lengths = sorted({len(t) for t in candidates})
    specials = frozenset(specials)
    out: Counter = Counter()
    for doc in corpus_tok:
        at: dict[int, list[NToken]] = defaultdict(list)
        for k in lengths:
            for i, w in _windows(doc, k, specials, words_only):
                t = by_ids.get(w)
                if t is not None:
                    at[i].append(t)
        for i in sorted(at):
            for a in at[i]:
                for j in range(i, i + len(a)):
                    for b in at.get(j, ()):
                        # each unordered occurrence pair once: earlier start, or
                        # same start with the shorter one first
                        if j == i and len(b) <= len(a):
                            continue
                        if a == b:
                            out[(a, a)] += 1
                        else:
                            out[(a, b)] += 1
                            out[(b, a)] += 1
    return dict(out)


# -- vectorized corpus-scale path ---------------------------------------------


@dataclass
class CandidateTable:
    """Mined candidates with frequencies and a sparse symmetric overlap matrix.

    Candidate ``c`` has base ids ``ids[c, :lengths[c]]``; candidates are ordered
    by length, then lexicographically by base ids. Overlaps are held in CSR form
    (``indptr``, ``indices``, ``data``), diagonal included.
    """

    n_max: int
    min_freq: int
    words_only: bool
    ids: np.ndarray
    lengths: np.ndarray
    counts: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    old_token_freq: dict[int, int]
    total_tokens: int
    surfaces: list[str] | None = None
    tokenizer_sha256: str = ""
    corpus_sha256: str = ""

    def __len__(self) -> int:
        return len(self.counts)

    def base_ids(self, c: int) -> tuple[int, ...]:
        return tuple(int(x) for x in self.ids[c, : self.lengths[c]])

    def ntoken(self, c: int) -> NToken:
        return NToken(self.base_ids(c), self.surfaces[c] if self.surfaces else "")

    @cached_property
    def index(self) -> dict[tuple[int, ...], int]:
        return {self.base_ids(c): c for c in range(len(self))}

    def cid(self, t: NToken | Sequence[int]) -> int | None:
        key = t.base_ids if isinstance(t, NToken) else tuple(t)
        return self.index.get(key)

    @cached_property
    def freq(self) -> dict[NToken, int]:
        return {self.ntoken(c): int(self.counts[c]) for c in range(len(self))}

    def row(self, c: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[c], self.indptr[c + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def overlaps_of(self, t: NToken) -> dict[NToken, int]:
        c = self.cid(t)
        if c is None:
            return {}
        cols, vals = self.row(c)
        return {self.ntoken(int(j)): int(v) for j, v in zip(cols, vals)}

    def overlap(self, t: NToken, u: NToken) -> int:
        c, d = self.cid(t), self.cid(u)
        if c is None or d is None:
            return 0
        cols, vals = self.row(c)
        k = np.searchsorted(cols, d)
        return int(vals[k]) if k < len(cols) and cols[k] == d else 0

    @property
    def overlaps(self) -> dict[tuple[NToken, NToken], int]:
        out = {}
        for c in range(len(self)):
            t = self.ntoken(c)
            cols, vals = self.row(c)
            for j, v in zip(cols, vals):
                out[(t, self.ntoken(int(j)))] = int(v)
        return out


def _unique_rows(rows: np.ndarray):
    """Lexicographically sorted unique rows, inverse index and counts."""
    n = len(rows)
    if n == 0:
        return rows, np.zeros(0, np.int64), np.zeros(0, np.int64)
    order = np.lexsort(rows.T[::-1])
    srt = rows[order]
    new = np.ones(n, bool)
    new[1:] = (srt[1:] != srt[:-1]).any(axis=1)
    group = np.cumsum(new) - 1
    inverse = np.empty(n, np.int64)
    inverse[order] = group
    starts = np.flatnonzero(new)
    counts = np.diff(np.append(starts, n))
    return srt[starts], inverse, counts


def _reduce_keys(keys: np.ndarray, counts: np.ndarray):
    if len(keys) == 0:
        return keys, counts
    order = np.argsort(keys, kind="stable")
    ks = keys[order]
    starts = np.flatnonzero(np.r_[True, ks[1:] != ks[:-1]])
    return ks[starts], np.add.reduceat(counts[order], starts)


@dataclass
class _Shard:
    arr: np.ndarray  # token ids, -1 at document ends and specials
    ws: np.ndarray  # pre-token start flags
    windows: dict = field(default_factory=dict)  # k -> (positions, local inverse, uniq rows, counts)
    cids: dict = field(default_factory=dict)  # k -> candidate id per position (-1 none)


def _flatten(docs: Sequence, specials: frozenset[int], words_only: bool) -> _Shard:
    total = sum(len(_ids(d)) + 1 for d in docs)
    arr = np.full(total, -1, np.int64)
    ws = np.zeros(total, bool)
    pos = 0
    for d in docs:
        ids = _ids(d)
        n = len(ids)
        arr[pos : pos + n] = ids
        if words_only:
            starts = _starts(d, True)
            if n:
                ws[pos : pos + n] = starts
        pos += n + 1
    if specials:
        arr[np.isin(arr, np.fromiter(specials, np.int64))] = -1
    return _Shard(arr, ws)


def _shard_windows(shard: _Shard, n_max: int, words_only: bool) -> _Shard:
    arr = shard.arr
    for k in range(2, n_max + 1):
        if len(arr) < k:
            shard.windows[k] = (
                np.zeros(0, np.int64),
                np.zeros(0, np.int64),
                np.zeros((0, k), np.int64),
                np.zeros(0, np.int64),
            )
            continue
        win = sliding_window_view(arr, k)
        valid = (win >= 0).all(axis=1)
        if words_only:
            valid &= ~sliding_window_view(shard.ws, k)[:, 1:].any(axis=1)
        pos = np.flatnonzero(valid)
        uniq, inv, cnt = _unique_rows(win[pos])
        shard.windows[k] = (pos, inv, uniq, cnt)
    return shard


def _shard_pairs(shard: _Shard, n_max: int, n_cand: int):
    n = len(shard.arr)
    keys, vals = [], []
    for k in range(2, n_max + 1):
        ck = shard.cids[k]
        for l in range(2, n_max + 1):
            cl = shard.cids[l]
            # B starts d positions after A (d < len(A)); at d == 0 only the
            # shorter occurrence leads, so each occurrence pair is seen once
            for d in range(0 if k < l else 1, k):
                a = ck[: n - d]
                b = cl[d:]
                m = (a >= 0) & (b >= 0)
                if not m.any():
                    continue
                u, c = np.unique(a[m] * n_cand + b[m], return_counts=True)
                keys.append(u)
                vals.append(c)
    if not keys:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return _reduce_keys(np.concatenate(keys), np.concatenate(vals))


def mine(
    corpus_tok: Sequence,
    n_max: int,
    min_freq: int = DEFAULT_MIN_FREQ,
    *,
    words_only: bool = False,
    tok: TokenizerDef | None = None,
    specials: Collection[int] | None = None,
    shards: int = 1,
    threads: int = 1,
) -> CandidateTable:
    """Build the full candidate table (frequencies + overlaps) for a base-encoded corpus.

    Documents are split into ``shards`` contiguous groups whose window counts
    and overlap counts are merged by summation; the result does not depend on
    the shard count.
    """
    if n_max < 2:
        raise ParameterError(f"n_max must be >= 2, got {n_max}")
    if min_freq < 1:
        raise ParameterError(f"min_freq must be >= 1, got {min_freq}")
    specials = _specials(tok, specials)
    docs = list(corpus_tok)
    shards = max(1, min(shards, len(docs) or 1))
    bounds = np.linspace(0, len(docs), shards + 1).astype(int)
    parts = [_flatten(docs[a:b], specials, words_only) for a, b in zip(bounds, bounds[1:])]

    with ThreadPoolExecutor(max(1, threads)) as ex:
        parts = list(ex.map(lambda s: _shard_windows(s, n_max, words_only), parts))

    # merge per-length window counts across shards and assign candidate ids
    cand_rows: list[np.ndarray] = []
    cand_counts: list[np.ndarray] = []
    next_id = 0
    for k in range(2, n_max + 1):
        all_rows = np.concatenate([p.windows[k][2] for p in parts])
        all_counts = np.concatenate([p.windows[k][3] for p in parts])
        g_rows, g_inv, _ = _unique_rows(all_rows)
        g_counts = np.bincount(g_inv, weights=all_counts, minlength=len(g_rows)).astype(np.int64)
        keep = g_counts >= min_freq
        g_cid = np.full(len(g_rows), -1, np.int64)
        g_cid[keep] = np.arange(next_id, next_id + int(keep.sum()))
        next_id += int(keep.sum())
        cand_rows.append(g_rows[keep])
        cand_counts.append(g_counts[keep])
        offset = 0
        for p in parts:
            pos, inv, uniq, _ = p.windows[k]
            cid = np.full(len(p.arr), -1, np.int64)
            cid[pos] = g_cid[g_inv[offset + inv]]
            offset += len(uniq)
            p.cids[k] = cid
    n_cand = next_id

    ids = np.full((n_cand, n_max), -1, np.int64)
    lengths = np.zeros(n_cand, np.int64)
    row = 0
    for k, rows in zip(range(2, n_max + 1), cand_rows):
        ids[row : row + len(rows), :k] = rows
        lengths[row : row + len(rows)] = k
        row += len(rows)
    counts = np.concatenate(cand_counts) if cand_counts else np.zeros(0, np.int64)

    with ThreadPoolExecutor(max(1, threads)) as ex:
        pair_parts = list(ex.map(lambda s: _shard_pairs(s, n_max, n_cand), parts))
    keys, vals = _reduce_keys(
        np.concatenate([k for k, _ in pair_parts]) if pair_parts else np.zeros(0, np.int64),
        np.concatenate([v for _, v in pair_parts]) if pair_parts else np.zeros(0, np.int64),
    )
    a, b = keys // max(n_cand, 1), keys % max(n_cand, 1)
    off = a != b
    sym_keys = np.concatenate([keys, b[off] * n_cand + a[off]])
    sym_vals = np.concatenate([vals, vals[off]])
    sym_keys, sym_vals = _reduce_keys(sym_keys, sym_vals)
    rows_of = sym_keys // max(n_cand, 1)
    indptr = np.searchsorted(rows_of, np.arange(n_cand + 1)).astype(np.int64)
    indices = (sym_keys % max(n_cand, 1)).astype(np.int64)

    tok_counts: np.ndarray = np.zeros(0, np.int64)
    for p in parts:
        valid = p.arr[p.arr >= 0]
        bc = np.bincount(valid) if len(valid) else np.zeros(0, np.int64)
        if len(bc) > len(tok_counts):
            bc[: len(tok_counts)] += tok_counts
            tok_counts = bc
        else:
            tok_counts[: len(bc)] += bc
    old_freq = {int(i): int(c) for i, c in enumerate(tok_counts) if c}

    surfaces = None
    if tok is not None:
        surfaces = [
            "".join(tok.surface(int(i)) for i in ids[c, : lengths[c]]) for c in range(n_cand)
        ]
    return CandidateTable(
        n_max=n_max,
        min_freq=min_freq,
        words_only=words_only,
        ids=ids,
        lengths=lengths,
        counts=counts,
        indptr=indptr,
        indices=indices,
        data=sym_vals.astype(np.int64),
        old_token_freq=old_freq,
        total_tokens=int(tok_counts.sum()),
        surfaces=surfaces,
    )
