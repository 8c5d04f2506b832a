from functools import lru_cache

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import M, letters, segmentation_tokenizer
from vocab_adapt.corpus import Corpus, Document
from vocab_adapt.errors import DecodingError, ParameterError
from vocab_adapt.miner import NToken
from vocab_adapt.patching import (
    PatchedVocab,
    decode_patched,
    encode_patched,
    measure_ids,
    measure_savings,
)
from vocab_adapt.selection import VocabPatch, pick_removable
from vocab_adapt.tokenizer import Provenance, TokenizerDef


def make_patch(tok, ntokens, *, old_freq=None, n_max=None):
    ntokens = [NToken(tuple(t)) for t in ntokens]
    if not ntokens:
        return VocabPatch.identity(tok, n_max or 2)
    removed = pick_removable(tok, old_freq or {}, len(ntokens),
                             exclude={b for t in ntokens for b in t.base_ids})
    return VocabPatch(
        n_max or max((len(t) for t in ntokens), default=2),
        "algorithm1",
        "overlap_aware",
        tuple(removed),
        tuple(zip(removed, ntokens)),
        tok.fingerprint(),
    )


def best_segmentation(ids, keys):
    """Exhaustive minimum unit count over all segmentations into known keys."""

    @lru_cache(maxsize=None)
    def go(i):
        if i == len(ids):
            return 0
        return min(1 + go(j) for j in range(i + 1, len(ids) + 1)
                   if j == i + 1 or tuple(ids[i:j]) in keys)

    return go(0)


def test_identity_patch_reproduces_base():
    tok = letters(4)
    pv = PatchedVocab(tok, VocabPatch.identity(tok))
    ids = [0, 1, 2, 3, 0, 1]
    assert pv.patch_ids(ids) == ids
    assert pv.patch_ids(ids, optimal=True) == ids
    rep = measure_ids([ids], pv)
    assert rep.greedy_savings_pct == 0.0 and rep.optimal_savings_pct == 0.0


def test_optimal_beats_greedy_on_crafted_input():
    tok = letters(4)
    pv = PatchedVocab(tok, make_patch(tok, [(0, 1), (1, 2, 3)]))
    ids = [0, 1, 2, 3]
    assert len(pv.segment_greedy(ids)) == 3  # ab | c | d
    assert len(pv.segment_optimal(ids)) == 2  # a | bcd
    assert pv.expand(pv.segment_optimal(ids)) == ids


def test_optimal_tie_break_is_leftmost_longest():
    tok = letters(4)
    pv = PatchedVocab(tok, make_patch(tok, [(0, 1), (1, 2)]))
    # "abc": ab|c and a|bc both use two units; the longer first unit wins
    assert pv.expand(pv.segment_optimal([0, 1, 2])[:1]) == [0, 1]


def test_greedy_prefers_longest_match():
    tok = letters(4)
    pv = PatchedVocab(tok, make_patch(tok, [(0, 1), (0, 1, 2)]))
    assert [pv.expand([u]) for u in pv.segment_greedy([0, 1, 2, 0, 1])] == [[0, 1, 2], [0, 1]]


def test_removed_tokens_are_decomposed_before_matching():
    tok = TokenizerDef({"a": 0, "b": 1, "ab": 2, "abab": 3}, [("a", "b"), ("ab", "ab")])
    patch = VocabPatch(2, "algorithm1", "overlap_aware", (3,), ((3, NToken((2, 0))),),
                       tok.fingerprint())
    pv = PatchedVocab(tok, patch)
    assert tok.encode("ababa") == [3, 0]
    units = pv.encode("ababa")
    assert units == [2, 3]
    assert pv.decode(units) == "ababa"
    assert 3 not in pv.decompose_ids([3])


def test_decode_unknown_unit_reports_index():
    tok = letters(4)
    pv = PatchedVocab(tok, make_patch(tok, [(0, 1)]))
    removed = pv.patch.removed[0]
    with pytest.raises(DecodingError, match="index 1"):
        pv.decode([0, 999])
    assert pv.unit_surface(removed) == "ab"


def test_measure_rejects_empty_corpus():
    tok = letters(4)
    pv = PatchedVocab(tok, VocabPatch.identity(tok))
    with pytest.raises(ParameterError):
        measure_ids([], pv)
    with pytest.raises(ParameterError):
        measure_savings(Corpus((), "test"), pv)


def test_specials_are_not_counted():
    tok = segmentation_tokenizer(["ab"], alphabet="ab", specials=("<s>",))
    s = tok.vocab["<s>"]
    pv = PatchedVocab(tok, VocabPatch.identity(tok))
    rep = measure_ids([[s, 0, 1, s]], pv)
    assert rep.base_tokens == 2


def test_toy_savings_three_sevenths():
    tok = letters(4)
    pv = PatchedVocab(tok, make_patch(tok, [(0, 1)]))
    rep = measure_ids([[0, 1, 0, 1, 0, 1, 2]], pv)
    assert (rep.base_tokens, rep.greedy_tokens) == (7, 4)
    assert rep.greedy_savings_pct == pytest.approx(100 * 3 / 7)


def test_measure_savings_on_text_corpus():
    tok = segmentation_tokenizer(["ab", " ab"], filler=4)
    ab, sab = tok.vocab["ab"], tok.vocab[M + "ab"]
    pv = PatchedVocab(tok, make_patch(tok, [(ab, sab)], old_freq={ab: 2, sab: 2}))
    corpus = Corpus((Document("d0", "ab ab"), Document("d1", "ab")), "test")
    rep = measure_savings(corpus, pv, per_doc=True)
    assert (rep.base_tokens, rep.greedy_tokens) == (3, 2)
    assert [d.doc_id for d in rep.per_doc] == ["d0", "d1"]
    assert rep.to_dict()["split"] == "test"
    seq = encode_patched("ab ab", pv)
    assert seq.provenance == Provenance.PATCHED
    assert decode_patched(seq, pv) == "ab ab"


def test_physics_passage_savings(physics_passage):
    tok = segmentation_tokenizer(physics_passage["base"], filler=40)
    text = "".join(physics_passage["base"])
    assert "".join(physics_passage["patched"]) == text
    base_ids = tok.encode(text)
    ntokens = []
    for piece in physics_passage["patched"]:
        ids = tuple(tok.encode(piece))
        if len(ids) > 1 and ids not in ntokens:
            ntokens.append(ids)
    assert len(ntokens) == 18 and max(map(len, ntokens)) == 3
    freq = {}
    for i in base_ids:
        freq[i] = freq.get(i, 0) + 1
    pv = PatchedVocab(tok, make_patch(tok, ntokens, old_freq=freq))
    units = pv.encode(text)
    assert [pv.unit_surface(u).replace(M, " ") for u in units] == physics_passage["patched"]
    rep = measure_ids([base_ids], pv)
    assert (rep.base_tokens, rep.greedy_tokens) == (60, 39)
    assert rep.greedy_savings_pct == pytest.approx(35.0)


# -- properties ------------------------------------------------------------------


# letters a-d (ids 0-3) plus a dozen unused composites to recycle
ROOMY = segmentation_tokenizer([], alphabet="abcd", filler=12)


@st.composite
def patched_inputs(draw):
    tok = ROOMY
    n = draw(st.integers(0, 6))
    ntokens = draw(st.lists(
        st.lists(st.integers(0, 3), min_size=2, max_size=3).map(tuple),
        min_size=n, max_size=n, unique=True,
    ))
    ids = draw(st.lists(st.integers(0, 3), max_size=16))
    return tok, ntokens, ids


@settings(max_examples=300, deadline=None)
@given(patched_inputs())
def test_encoders_against_exhaustive_oracle(inp):
    tok, ntokens, ids = inp
    pv = PatchedVocab(tok, make_patch(tok, ntokens, n_max=3))
    greedy, optimal = pv.segment_greedy(ids), pv.segment_optimal(ids)
    assert pv.expand(greedy) == ids and pv.expand(optimal) == ids
    assert len(optimal) == best_segmentation(tuple(ids), frozenset(ntokens))
    assert len(optimal) <= len(greedy) <= len(ids)


@settings(max_examples=200, deadline=None)
@given(patched_inputs(), st.integers(0, 5))
def test_optimal_count_shrinks_with_larger_patch(inp, drop):
    tok, ntokens, ids = inp
    small = ntokens[: max(0, len(ntokens) - drop)]
    big = PatchedVocab(tok, make_patch(tok, ntokens, n_max=3))
    sub = PatchedVocab(tok, make_patch(tok, small, n_max=3))
    assert len(big.segment_optimal(ids)) <= len(sub.segment_optimal(ids))


ALPHA = "abcdef "


@settings(max_examples=150, deadline=None)
@given(st.text(alphabet=ALPHA, max_size=60), st.data())
def test_text_round_trip_with_removals(text, data):
    tok = segmentation_tokenizer(["ab", "cd", "abcd", " ab", " e", "ef"], alphabet="abcdef")
    composites = sorted(tok.merge_table)
    removed = data.draw(st.lists(st.sampled_from(composites), unique=True, max_size=3))
    keep_ids = sorted(set(tok.id_to_token) - set(removed))
    pairs = data.draw(st.lists(
        st.tuples(st.sampled_from(keep_ids), st.sampled_from(keep_ids)),
        unique=True, min_size=len(removed), max_size=len(removed),
    ))
    patch = VocabPatch(2, "algorithm1", "overlap_aware", tuple(removed),
                       tuple((r, NToken(p)) for r, p in zip(removed, pairs)),
                       tok.fingerprint())
    pv = PatchedVocab(tok, patch)
    for optimal in (False, True):
        units = pv.encode(text, optimal=optimal)
        assert pv.decode(units) == text
        assert all(u in pv.keep or u in pv.expansion for u in units)
