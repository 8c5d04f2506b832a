import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import toy_ab
from vocab_adapt.cache import dumps, load_table, loads, read_meta, save_table
from vocab_adapt.errors import CacheError
from vocab_adapt.miner import mine


def same(a, b):
    for name in ("ids", "lengths", "counts", "indptr", "indices", "data"):
        assert np.array_equal(getattr(a, name), getattr(b, name)), name
    for name in ("n_max", "min_freq", "words_only", "old_token_freq", "total_tokens",
                 "surfaces", "tokenizer_sha256", "corpus_sha256"):
        assert getattr(a, name) == getattr(b, name), name


def test_round_trip_with_surfaces(tmp_path):
    tok = toy_ab()
    table = mine([[0, 1, 0, 1, 2, 0, 1]], 3, 1, tok=tok)
    table.tokenizer_sha256, table.corpus_sha256 = "t" * 64, "c" * 64
    save_table(table, tmp_path / "c.avct")
    same(load_table(tmp_path / "c.avct"), table)
    meta = read_meta(tmp_path / "c.avct")
    assert meta["n_max"] == 3 and meta["tokenizer_sha256"] == "t" * 64
    assert meta["n_candidates"] == len(table)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.integers(0, 5), max_size=40), max_size=5), st.sampled_from([2, 3]))
def test_round_trip_property(docs, n_max):
    table = mine(docs, n_max, 1)
    same(loads(dumps(table)), table)


def test_file_starts_with_magic_and_version():
    buf = dumps(mine([[0, 1, 0, 1]], 2, 1))
    assert buf[:4] == b"AVCT"
    assert struct.unpack_from("<I", buf, 4) == (1,)


@pytest.mark.parametrize(
    "mutate, match",
    [
        (lambda b: b"XXXX" + b[4:], "bad magic"),
        (lambda b: b[:4] + struct.pack("<I", 9) + b[8:], "version 9"),
        (lambda b: b[:-3], "past end"),
        (lambda b: b[:8], "missing section META"),
    ],
)
def test_corrupt_caches_rejected(mutate, match):
    buf = dumps(mine([[0, 1, 0, 1]], 2, 1))
    with pytest.raises(CacheError, match=match):
        loads(mutate(buf))


def test_read_meta_rejects_other_files(tmp_path):
    p = tmp_path / "x"
    p.write_bytes(b"hello world, not a cache")
    with pytest.raises(CacheError):
        read_meta(p)
