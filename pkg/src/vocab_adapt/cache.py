"""Binary cache for mined candidate tables.

Layout (little-endian): magic ``AVCT``, u32 version, then sections of
``4-byte tag | u64 payload length | payload``. Numeric payloads are raw arrays;
``META`` is UTF-8 JSON and ``SURF`` is a run of u32-length-prefixed UTF-8 strings.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CacheError
from .miner import CandidateTable

MAGIC = b"AVCT"
VERSION = 1

_ARRAYS = {
    b"CIDS": ("ids", "<i4"),
    b"LENS": ("lengths", "<u1"),
    b"FREQ": ("counts", "<u8"),
    b"OPTR": ("indptr", "<u8"),
    b"OIDX": ("indices", "<u4"),
    b"OVAL": ("data", "<u8"),
}


def _section(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<Q", len(payload)) + payload


def dumps(table: CandidateTable) -> bytes:
    meta = {
        "n_max": table.n_max,
        "min_freq": table.min_freq,
        "words_only": table.words_only,
        "total_tokens": table.total_tokens,
        "n_candidates": len(table),
        "tokenizer_sha256": table.tokenizer_sha256,
        "corpus_sha256": table.corpus_sha256,
    }
    out = [MAGIC, struct.pack("<I", VERSION), _section(b"META", json.dumps(meta).encode())]
    for tag, (attr, dtype) in _ARRAYS.items():
        out.append(_section(tag, np.ascontiguousarray(getattr(table, attr), dtype).tobytes()))
    otok = np.array(sorted(table.old_token_freq.items()), dtype="<u8").reshape(-1, 2)
    out.append(_section(b"OTOK", otok.tobytes()))
    if table.surfaces is not None:
        parts = []
        for s in table.surfaces:
            b = s.encode("utf-8")
            parts.append(struct.pack("<I", len(b)) + b)
        out.append(_section(b"SURF", b"".join(parts)))
    return b"".join(out)


def loads(buf: bytes) -> CandidateTable:
    if buf[:4] != MAGIC:
        raise CacheError("not a candidate cache (bad magic)")
    if len(buf) < 8:
        raise CacheError("truncated candidate cache header")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise CacheError(f"unsupported candidate cache version {version}")
    sections: dict[bytes, bytes] = {}
    pos = 8
    while pos < len(buf):
        if pos + 12 > len(buf):
            raise CacheError(f"truncated section header at byte {pos}")
        tag = buf[pos : pos + 4]
        (size,) = struct.unpack_from("<Q", buf, pos + 4)
        pos += 12
        if pos + size > len(buf):
            raise CacheError(f"section {tag!r} runs past end of file")
        sections[tag] = buf[pos : pos + size]
        pos += size
    for tag in (b"META", b"OTOK", *_ARRAYS):
        if tag not in sections:
            raise CacheError(f"missing section {tag.decode()}")

    meta = json.loads(sections[b"META"])
    n, n_max = meta["n_candidates"], meta["n_max"]
    arrays = {}
    for tag, (attr, dtype) in _ARRAYS.items():
        arrays[attr] = np.frombuffer(sections[tag], dtype).astype(np.int64)
    arrays["ids"] = arrays["ids"].reshape(n, n_max)
    if len(arrays["counts"]) != n or len(arrays["indptr"]) != n + 1:
        raise CacheError("candidate cache arrays disagree with META")
    otok = np.frombuffer(sections[b"OTOK"], "<u8").reshape(-1, 2)

    surfaces = None
    if b"SURF" in sections:
        raw, p, surfaces = sections[b"SURF"], 0, []
        while p < len(raw):
            (size,) = struct.unpack_from("<I", raw, p)
            surfaces.append(raw[p + 4 : p + 4 + size].decode("utf-8"))
            p += 4 + size
        if len(surfaces) != n:
            raise CacheError("surface count disagrees with META")

    return CandidateTable(
        n_max=n_max,
        min_freq=meta["min_freq"],
        words_only=meta["words_only"],
        old_token_freq={int(i): int(c) for i, c in otok},
        total_tokens=meta["total_tokens"],
        surfaces=surfaces,
        tokenizer_sha256=meta["tokenizer_sha256"],
        corpus_sha256=meta["corpus_sha256"],
        **arrays,
    )


def save_table(table: CandidateTable, path: str | Path) -> None:
    Path(path).write_bytes(dumps(table))


def load_table(path: str | Path) -> CandidateTable:
    return loads(Path(path).read_bytes())


def read_meta(path: str | Path) -> dict:
    """Read only the META section (for cache staleness checks)."""
    with open(path, "rb") as f:
        head = f.read(20)
        if head[:4] != MAGIC or head[8:12] != b"META":
            raise CacheError(f"{path}: not a candidate cache")
        (size,) = struct.unpack_from("<Q", head, 12)
        return json.loads(f.read(size))
