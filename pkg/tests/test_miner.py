from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vocab_adapt.corpus import EncodedDoc
from vocab_adapt.errors import ParameterError
from vocab_adapt.miner import (
    NToken,
    count_freqs,
    count_overlaps,
    count_windows,
    mine,
    prepare_n_tokens,
)
from vocab_adapt.tokenizer import Provenance

TOY = [[0, 1, 0, 1, 0, 1, 2]]


def nt(*ids):
    return NToken(tuple(ids))


# -- independent oracle: enumerate every occurrence, compare every pair ---------------


def brute_force(docs, n_max, min_freq, specials=frozenset(), words_only=False):
    occ = []  # (doc, start, end_exclusive, ids)
    for d, doc in enumerate(docs):
        ids = doc.ids if isinstance(doc, EncodedDoc) else doc
        for k in range(2, n_max + 1):
            for s in range(len(ids) - k + 1):
                w = tuple(ids[s : s + k])
                if any(x in specials for x in w):
                    continue
                if words_only and any(doc.word_starts[s + 1 : s + k]):
                    continue
                occ.append((d, s, s + k, w))
    freq = Counter(w for *_, w in occ)
    freq = {w: c for w, c in freq.items() if c >= min_freq}
    occ = [o for o in occ if o[3] in freq]
    over = Counter()
    for i in range(len(occ)):
        for j in range(i + 1, len(occ)):
            (d1, s1, e1, a), (d2, s2, e2, b) = occ[i], occ[j]
            if d1 == d2 and s1 < e2 and s2 < e1:
                over[(a, b)] += 1
                if a != b:
                    over[(b, a)] += 1
    return freq, dict(over)


def table_dicts(table):
    freq = {t.base_ids: c for t, c in table.freq.items()}
    over = {(a.base_ids, b.base_ids): c for (a, b), c in table.overlaps.items()}
    return freq, over


def reference_dicts(docs, n_max, min_freq, specials=frozenset(), words_only=False):
    cands = prepare_n_tokens(docs, n_max, min_freq, specials=specials, words_only=words_only)
    freq = count_freqs(docs, cands, specials=specials, words_only=words_only)
    over = count_overlaps(docs, cands, specials=specials, words_only=words_only)
    return (
        {t.base_ids: c for t, c in freq.items()},
        {(a.base_ids, b.base_ids): c for (a, b), c in over.items()},
    )


# -- worked examples -------------------------------------------------------------------


def test_prepare_examples():
    assert prepare_n_tokens(TOY, 2, 1) == {nt(0, 1), nt(1, 0), nt(1, 2)}
    assert prepare_n_tokens(TOY, 2, 2) == {nt(0, 1), nt(1, 0)}
    assert prepare_n_tokens([], 2) == set()


def test_n_max_below_two_rejected():
    with pytest.raises(ParameterError):
        prepare_n_tokens(TOY, 1)
    with pytest.raises(ParameterError):
        mine(TOY, 1)


def test_count_freqs_examples():
    assert count_freqs(TOY, {nt(0, 1)}) == {nt(0, 1): 3}
    assert count_freqs([[0, 0, 0]], {nt(0, 0)}) == {nt(0, 0): 2}
    assert nt(5, 5) not in count_freqs(TOY, {nt(5, 5)})


def test_overlap_examples():
    table = mine(TOY, 2, 1)
    assert table.overlap(nt(0, 1), nt(1, 0)) == 4
    assert table.overlap(nt(1, 0), nt(0, 1)) == 4
    assert table.overlap(nt(0, 1), nt(1, 2)) == 1
    disjoint = mine([[0, 1, 9, 2, 3], [0, 1, 9, 2, 3]], 2, 2)
    assert disjoint.overlap(nt(0, 1), nt(2, 3)) == 0
    assert nt(2, 3) not in disjoint.overlaps_of(nt(0, 1))


def test_containment_counts_as_overlap():
    # "special relativity" style: a 2-gram inside a 3-gram
    docs = [[5, 6, 7, 1, 5, 6, 7]]
    table = mine(docs, 3, 2)
    assert table.overlap(nt(5, 6), nt(5, 6, 7)) == 2
    assert table.overlap(nt(6, 7), nt(5, 6, 7)) == 2


def test_self_overlap_on_diagonal():
    assert mine([[0, 0, 0]], 2, 1).overlap(nt(0, 0), nt(0, 0)) == 1
    assert mine(TOY, 2, 1).overlap(nt(0, 1), nt(0, 1)) == 0


def test_windows_stop_at_documents_and_specials():
    docs = [[0, 1], [2, 3, 9, 4, 5]]
    counts = count_windows(docs, 3, specials={9})
    assert (1, 2) not in counts
    assert all(9 not in w for w in counts)
    table = mine(docs, 3, 1, specials={9})
    assert {t.base_ids for t in table.freq} == {(0, 1), (2, 3), (4, 5)}


def test_words_only_respects_word_starts():
    doc = EncodedDoc((0, 1, 2, 3, 4), Provenance.BASE, (True, False, True, False, False))
    table = mine([doc], 3, 1, words_only=True)
    assert {t.base_ids for t in table.freq} == {(0, 1), (2, 3), (3, 4), (2, 3, 4)}
    with pytest.raises(ParameterError, match="word_starts"):
        mine([[0, 1, 2]], 2, 1, words_only=True)


def test_old_token_freq_and_total_exclude_specials():
    table = mine([[0, 1, 9, 1]], 2, 1, specials={9})
    assert table.old_token_freq == {0: 1, 1: 2}
    assert table.total_tokens == 3


def test_candidate_order_is_length_then_lexicographic():
    table = mine([[3, 1, 2, 3, 1, 2]], 3, 1)
    keys = [table.base_ids(c) for c in range(len(table))]
    assert keys == sorted(keys, key=lambda t: (len(t), t))


def test_surfaces_from_tokenizer():
    from builders import toy_ab

    tok = toy_ab()
    table = mine([[0, 1, 0, 1]], 2, 1, tok=tok)
    assert table.ntoken(table.cid((0, 1))).surface == "ab"


# -- oracle equivalence properties ---------------------------------------------------


@st.composite
def corpora(draw, words=False):
    alphabet = draw(st.integers(2, 8))
    specials = draw(st.sets(st.integers(0, alphabet - 1), max_size=1))
    budget = draw(st.integers(0, 200))
    docs = []
    while budget > 0:
        n = draw(st.integers(0, min(budget, 60)))
        ids = draw(st.lists(st.integers(0, alphabet - 1), min_size=n, max_size=n))
        if words:
            starts = draw(st.lists(st.booleans(), min_size=n, max_size=n))
            docs.append(EncodedDoc(tuple(ids), Provenance.BASE, tuple(starts)))
        else:
            docs.append(ids)
        budget -= max(n, 1)
    return docs, frozenset(specials)


@settings(max_examples=300, deadline=None)
@given(corpora(), st.sampled_from([2, 3]), st.integers(1, 3))
def test_mine_matches_brute_force(data, n_max, min_freq):
    docs, specials = data
    expected = brute_force(docs, n_max, min_freq, specials)
    assert table_dicts(mine(docs, n_max, min_freq, specials=specials)) == expected
    assert reference_dicts(docs, n_max, min_freq, specials) == expected


@settings(max_examples=150, deadline=None)
@given(corpora(words=True), st.sampled_from([2, 3, 4]), st.integers(1, 2))
def test_words_only_matches_brute_force(data, n_max, min_freq):
    docs, specials = data
    expected = brute_force(docs, n_max, min_freq, specials, words_only=True)
    got = mine(docs, n_max, min_freq, specials=specials, words_only=True)
    assert table_dicts(got) == expected


@settings(max_examples=150, deadline=None)
@given(corpora(), st.sampled_from([2, 3]), st.integers(1, 6), st.integers(1, 3))
def test_shard_count_does_not_change_result(data, n_max, shards, threads):
    docs, specials = data
    one = mine(docs, n_max, 1, specials=specials)
    many = mine(docs, n_max, 1, specials=specials, shards=shards, threads=threads)
    for name in ("ids", "lengths", "counts", "indptr", "indices", "data"):
        assert np.array_equal(getattr(one, name), getattr(many, name)), name
    assert one.old_token_freq == many.old_token_freq


@settings(max_examples=150, deadline=None)
@given(corpora(), st.integers(1, 5))
def test_window_counts_add_across_shards(data, cut):
    docs, specials = data
    whole = count_windows(docs, 3, specials=specials)
    parts = [docs[i::cut] for i in range(cut)]
    summed = sum((count_windows(p, 3, specials=specials) for p in parts), Counter())
    assert summed == whole


@settings(max_examples=200, deadline=None)
@given(corpora(), st.sampled_from([2, 3]))
def test_overlap_table_invariants(data, n_max):
    docs, specials = data
    table = mine(docs, n_max, 1, specials=specials)
    freq, over = table_dicts(table)
    assert all(c >= 1 for c in freq.values())
    for (a, b), c in over.items():
        assert over[(b, a)] == c
        assert 0 < c <= freq[a] * freq[b]
        # structural overlap: containment or a suffix of one equal to a prefix of the other
        sa, sb = " ".join(map(str, a)), " ".join(map(str, b))
        affix = any(a[-k:] == b[:k] or b[-k:] == a[:k] for k in range(1, min(len(a), len(b))))
        assert f" {sa} " in f" {sb} " or f" {sb} " in f" {sa} " or affix
