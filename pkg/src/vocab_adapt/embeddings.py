"""Embedding rows for new n-tokens, the AVEM matrix format and the hand-off manifest."""

from __future__ import annotations

import enum
import hashlib
import json
import os
import shutil
import struct
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    PackagingError,
    ParameterError,
    ProvenanceError,
    RowIndexError,
    ShapeError,
)
from .miner import NToken
from .selection import VocabPatch
from .tokenizer import TokenizerDef

MAGIC = b"AVEM"
VERSION = 1
_HEADER = struct.Struct("<4sIBII")
TRAINABLE = ["input_embeddings", "lm_head", "layer.first", "layer.last"]
_CHUNK_ROWS = 4096


class Role(str, enum.Enum):
    INPUT = "input"
    OUTPUT = "output"


_ROLE_CODE = {Role.INPUT: 0, Role.OUTPUT: 1}


class InitKind(str, enum.Enum):
    EXPONENTIAL = "exponential"
    MEAN = "mean"
    RANDOM = "random"


@dataclass(frozen=True)
class InitStrategy:
    kind: InitKind = InitKind.EXPONENTIAL
    rng_seed: int = 0
    exponent_scale: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "kind", InitKind(self.kind))
        if not self.exponent_scale > 0:
            raise ParameterError(f"exponent_scale must be > 0, got {self.exponent_scale}")


@dataclass
class EmbeddingMatrix:
    role: Role
    data: np.ndarray  # (rows, dim) float32; may be a read-only memmap

    def __post_init__(self):
        self.role = Role(self.role)
        if self.data.ndim != 2:
            raise ShapeError(f"embedding data must be 2-D, got shape {self.data.shape}")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def check_finite(self) -> None:
        for lo in range(0, self.rows, _CHUNK_ROWS):
            block = self.data[lo : lo + _CHUNK_ROWS]
            if not np.isfinite(block).all():
                bad = lo + int(np.flatnonzero(~np.isfinite(block).all(axis=1))[0])
                raise DataError(f"{self.role.value} matrix row {bad} has non-finite values")


def exp_weights(k: int, role: Role | str, exponent_scale: float = 2.0) -> np.ndarray:
    """w_i proportional to exp(+/- scale * i), i = 1..k; + for input, - for output."""
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    sign = 1.0 if Role(role) == Role.INPUT else -1.0
    z = sign * exponent_scale * np.arange(1, k + 1, dtype=np.float64)
    w = np.exp(z - z.max())
    return w / w.sum()


def row_moments(E: EmbeddingMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and standard deviation over all rows, streamed."""
    total = np.zeros(E.dim, np.float64)
    sq = np.zeros(E.dim, np.float64)
    for lo in range(0, E.rows, _CHUNK_ROWS):
        block = np.asarray(E.data[lo : lo + _CHUNK_ROWS], np.float64)
        total += block.sum(axis=0)
        sq += (block * block).sum(axis=0)
    mean = total / E.rows
    var = np.maximum(sq / E.rows - mean * mean, 0.0)
    return mean, np.sqrt(var)


def init_row(
    nt: NToken,
    E: EmbeddingMatrix,
    strat: InitStrategy = InitStrategy(),
    *,
    row_id: int | None = None,
    moments: tuple[np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    for b in nt.base_ids:
        if not 0 <= b < E.rows:
            raise RowIndexError(f"base id {b} outside matrix with {E.rows} rows")
    if strat.kind == InitKind.RANDOM:
        mean, std = moments if moments is not None else row_moments(E)
        seed = [strat.rng_seed, _ROLE_CODE[E.role]]
        seed += [row_id] if row_id is not None else list(nt.base_ids)
        rng = np.random.default_rng(seed)
        return rng.normal(mean, std).astype(np.float32)

    parts = np.asarray(E.data[list(nt.base_ids)], np.float64)
    if not np.isfinite(parts).all():
        raise DataError(f"constituent rows of {nt.base_ids} contain non-finite values")
    k = len(nt)
    if strat.kind == InitKind.MEAN:
        w = np.full(k, 1.0 / k)
    else:
        w = exp_weights(k, E.role, strat.exponent_scale)
    return (w @ parts).astype(np.float32)


def check_matrices(
    E_in: EmbeddingMatrix,
    E_out: EmbeddingMatrix,
    patch: VocabPatch,
    tok: TokenizerDef | None = None,
    force: bool = False,
) -> None:
    """Roles, shapes and (unless ``force``) tokenizer provenance of a matrix pair."""
    if E_in.role != Role.INPUT or E_out.role != Role.OUTPUT:
        raise ShapeError("expected an input-role and an output-role matrix")
    if E_in.rows != E_out.rows:
        raise ShapeError(f"row mismatch: input {E_in.rows}, output {E_out.rows}")
    if tok is not None:
        if E_in.rows != len(tok):
            raise ShapeError(f"matrices have {E_in.rows} rows, tokenizer has {len(tok)} tokens")
        if not force and patch.tokenizer_sha256 and patch.tokenizer_sha256 != tok.fingerprint():
            raise ProvenanceError("patch fingerprint does not match tokenizer (use force)")
    top = max([i for i, _ in patch.added] + [b for _, nt in patch.added for b in nt.base_ids],
              default=-1)
    if top >= E_in.rows:
        raise ShapeError(f"patch references id {top} but matrices have {E_in.rows} rows")


def build_patched_matrices(
    E_in: EmbeddingMatrix,
    E_out: EmbeddingMatrix,
    patch: VocabPatch,
    strat: InitStrategy = InitStrategy(),
    *,
    tok: TokenizerDef | None = None,
    force: bool = False,
) -> tuple[EmbeddingMatrix, EmbeddingMatrix]:
    """Copies of both matrices with each recycled row re-initialized for its n-token."""
    check_matrices(E_in, E_out, patch, tok, force)
    out = []
    for E in (E_in, E_out):
        moments = row_moments(E) if strat.kind == InitKind.RANDOM else None
        new_rows = [init_row(nt, E, strat, row_id=uid, moments=moments) for uid, nt in patch.added]
        data = np.array(E.data, dtype=np.float32, copy=True)
        for (uid, _), row in zip(patch.added, new_rows):
            data[uid] = row
        out.append(EmbeddingMatrix(E.role, data))
    return out[0], out[1]


# -- AVEM file format ----------------------------------------------------------


def write_matrix(E: EmbeddingMatrix, path: str | Path) -> None:
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, _ROLE_CODE[E.role], E.rows, E.dim))
        for lo in range(0, E.rows, _CHUNK_ROWS):
            f.write(np.ascontiguousarray(E.data[lo : lo + _CHUNK_ROWS], "<f4").tobytes())


def _read_header(path: Path) -> tuple[Role, int, int]:
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
    if len(head) < _HEADER.size or head[:4] != MAGIC:
        raise DataError(f"{path}: not an AVEM embedding file")
    _, version, role, rows, dim = _HEADER.unpack(head)
    if version != VERSION:
        raise DataError(f"{path}: unsupported AVEM version {version}")
    if role not in (0, 1):
        raise DataError(f"{path}: bad role byte {role}")
    expected = _HEADER.size + rows * dim * 4
    if path.stat().st_size != expected:
        raise ShapeError(f"{path}: size {path.stat().st_size} != expected {expected}")
    return (Role.INPUT if role == 0 else Role.OUTPUT), rows, dim


def read_matrix(path: str | Path, mode: str = "r") -> EmbeddingMatrix:
    """Open an AVEM file as a memory-mapped matrix (no full copy)."""
    path = Path(path)
    role, rows, dim = _read_header(path)
    data = np.memmap(path, dtype="<f4", mode=mode, offset=_HEADER.size, shape=(rows, dim))
    return EmbeddingMatrix(role, data)


def patch_matrix_file(
    src: str | Path,
    dst: str | Path,
    patch: VocabPatch,
    strat: InitStrategy = InitStrategy(),
    *,
    role: Role | str | None = None,
) -> None:
    """Streamed counterpart of :func:`build_patched_matrices` for one matrix file.

    The source is copied byte-for-byte and only the recycled rows are rewritten
    through a memory map.
    """
    E = read_matrix(src)
    if role is not None and E.role != Role(role):
        raise ShapeError(f"{src}: expected role {Role(role).value}, found {E.role.value}")
    moments = row_moments(E) if strat.kind == InitKind.RANDOM else None
    rows = [init_row(nt, E, strat, row_id=uid, moments=moments) for uid, nt in patch.added]
    del E
    shutil.copyfile(src, dst)
    if not rows:
        return
    out = read_matrix(dst, mode="r+")
    for (uid, _), row in zip(patch.added, rows):
        out.data[uid] = row
    out.data.flush()
    del out


def export_raw(E: EmbeddingMatrix, prefix: str | Path) -> tuple[Path, Path]:
    """Write ``<prefix>.txt`` (key/value header) and ``<prefix>.raw`` (float32 LE, row-major)."""
    prefix = Path(prefix)
    header, raw = prefix.with_suffix(".txt"), prefix.with_suffix(".raw")
    header.write_text(
        f"role {E.role.value}\nrows {E.rows}\ndim {E.dim}\ndtype float32\nendian little\n",
        encoding="utf-8",
    )
    with open(raw, "wb") as f:
        for lo in range(0, E.rows, _CHUNK_ROWS):
            f.write(np.ascontiguousarray(E.data[lo : lo + _CHUNK_ROWS], "<f4").tobytes())
    return header, raw


def import_raw(header_path: str | Path) -> EmbeddingMatrix:
    header_path = Path(header_path)
    fields = {}
    for line in header_path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition(" ")
            fields[key] = value.strip()
    try:
        rows, dim, role = int(fields["rows"]), int(fields["dim"]), Role(fields["role"])
    except (KeyError, ValueError) as e:
        raise DataError(f"{header_path}: bad raw header ({e})") from e
    if fields.get("dtype", "float32") != "float32" or fields.get("endian", "little") != "little":
        raise DataError(f"{header_path}: only little-endian float32 is supported")
    raw = header_path.with_suffix(".raw")
    if raw.stat().st_size != rows * dim * 4:
        raise ShapeError(f"{raw}: size does not match {rows}x{dim} float32")
    return EmbeddingMatrix(role, np.memmap(raw, dtype="<f4", mode="r", shape=(rows, dim)))


def load_matrix(path: str | Path, role: Role | str | None = None) -> EmbeddingMatrix:
    """Open ``.avem``, ``.npy`` or raw-header ``.txt`` matrices."""
    path = Path(path)
    if path.suffix == ".npy":
        if role is None:
            raise ParameterError(f"{path}: .npy matrices need an explicit role")
        E = EmbeddingMatrix(Role(role), np.load(path, mmap_mode="r"))
    elif path.suffix == ".txt":
        E = import_raw(path)
    else:
        E = read_matrix(path)
    if role is not None and E.role != Role(role):
        raise ShapeError(f"{path}: expected role {Role(role).value}, found {E.role.value}")
    return E


# -- manifest ------------------------------------------------------------------


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def export_manifest(
    patch: VocabPatch,
    paths: Mapping[str, str | Path],
    out_path: str | Path,
    *,
    config: dict | None = None,
) -> dict:
    """Write the fine-tuning hand-off manifest next to the artifacts it lists.

    Paths are recorded relative to the manifest's directory.
    """
    out_path = Path(out_path)
    root = out_path.parent
    artifacts = {}
    for name in sorted(paths):
        p = Path(paths[name])
        if not p.is_file():
            raise PackagingError(f"artifact {name!r} missing: {p}")
        artifacts[name] = {
            "path": os.path.relpath(p, root).replace(os.sep, "/"),
            "sha256": sha256_file(p),
        }
    manifest = {
        "format": "vocab-adapt-manifest/1",
        "artifacts": artifacts,
        "source": {
            "tokenizer_sha256": patch.tokenizer_sha256,
            "corpus_sha256": patch.corpus_sha256,
            "patch_sha256": patch.fingerprint(),
        },
        "n_added": len(patch.added),
        "trainable": list(TRAINABLE),
    }
    if config is not None:
        manifest["config"] = config
    out_path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return manifest
