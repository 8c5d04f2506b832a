"""Corpus ingestion, train/test split manifests, fingerprints and parallel encoding."""

from __future__ import annotations

import hashlib
import json
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError, ParameterError, VocabAdaptError
from .tokenizer import Provenance, TokenizerDef, TokenSeq

SPLITS = ("train", "test")
TEST_EVERY = 20  # 1 in 20 documents -> 95/5 split


class CorpusIOError(VocabAdaptError):
    exit_code = 3


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str


@dataclass(frozen=True)
class Corpus:
    documents: tuple[Document, ...]
    split: str = "train"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ParameterError(f"unknown split {self.split!r}")
        seen = set()
        for d in self.documents:
            if d.doc_id in seen:
                raise DataError(f"duplicate document id {d.doc_id!r}")
            seen.add(d.doc_id)

    def __len__(self) -> int:
        return len(self.documents)

    def texts(self) -> list[str]:
        return [d.text for d in self.documents]

    def fingerprint(self) -> str:
        return corpus_fingerprint(self.documents)


@dataclass(frozen=True)
class EncodedDoc(TokenSeq):
    """Base encoding plus a flag per token marking the start of a pre-token."""

    word_starts: tuple[bool, ...] = ()


def corpus_fingerprint(docs: Iterable[Document]) -> str:
    """SHA-256 over sorted (doc-id, content-hash) pairs; insensitive to file order."""
    entries = sorted(
        (d.doc_id, hashlib.sha256(d.text.encode("utf-8")).hexdigest()) for d in docs
    )
    h = hashlib.sha256()
    for doc_id, digest in entries:
        h.update(f"{doc_id}\t{digest}\n".encode("utf-8"))
    return h.hexdigest()


def load_documents(path: str | Path) -> list[Document]:
    """Read a directory of ``.txt`` files (one document each, recursive) or a
    single file holding one document per line."""
    path = Path(path)
    try:
        if path.is_dir():
            files = sorted(p for p in path.rglob("*.txt") if p.is_file())
            docs = [
                Document(p.relative_to(path).as_posix(), p.read_text(encoding="utf-8"))
                for p in files
            ]
        elif path.is_file():
            lines = path.read_text(encoding="utf-8").split("\n")
            if lines and lines[-1] == "":
                lines.pop()
            docs = [Document(f"{path.name}:{n + 1}", line) for n, line in enumerate(lines)]
        else:
            raise CorpusIOError(f"corpus path {path} does not exist")
    except UnicodeDecodeError as e:
        raise DataError(f"{path}: not valid UTF-8 ({e})") from e
    except OSError as e:
        raise CorpusIOError(f"cannot read corpus {path}: {e}") from e
    if not docs:
        raise DataError(f"corpus {path} contains no documents")
    return docs


def default_split(doc_ids: Sequence[str]) -> dict[str, list[str]]:
    ordered = sorted(doc_ids)
    test = [d for i, d in enumerate(ordered) if i % TEST_EVERY == TEST_EVERY - 1]
    test_set = set(test)
    return {"train": [d for d in ordered if d not in test_set], "test": test}


def read_manifest(path: str | Path) -> dict[str, list[str]]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise CorpusIOError(f"cannot read split manifest {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    if not isinstance(data, dict) or not all(
        isinstance(data.get(s, []), list) for s in SPLITS
    ):
        raise DataError(f"{path}: manifest must map 'train'/'test' to arrays of doc ids")
    overlap = set(data.get("train", [])) & set(data.get("test", []))
    if overlap:
        raise DataError(f"{path}: {len(overlap)} documents are in both train and test")
    return {s: list(data.get(s, [])) for s in SPLITS}


def write_manifest(split: dict[str, list[str]], path: str | Path) -> None:
    Path(path).write_text(json.dumps(split, indent=1) + "\n", encoding="utf-8")


def select_split(docs: Sequence[Document], manifest: dict[str, list[str]], split: str) -> Corpus:
    if split not in SPLITS:
        raise ParameterError(f"unknown split {split!r}")
    wanted = manifest.get(split) or []
    if not wanted:
        raise ParameterError(f"split {split!r} is absent from the manifest")
    by_id = {d.doc_id: d for d in docs}
    missing = [d for d in wanted if d not in by_id]
    if missing:
        raise DataError(f"manifest names unknown documents, e.g. {missing[0]!r}")
    return Corpus(tuple(by_id[d] for d in wanted), split)


def encode_document(tok: TokenizerDef, text: str) -> EncodedDoc:
    ids: list[int] = []
    starts: list[bool] = []
    for piece in tok.encode_pieces(text):
        ids.extend(piece)
        starts.append(True)
        starts.extend([False] * (len(piece) - 1))
    return EncodedDoc(tuple(ids), Provenance.BASE, tuple(starts))


_worker_tok: TokenizerDef | None = None


def _init_worker(tok: TokenizerDef) -> None:
    global _worker_tok
    _worker_tok = tok


def _encode_chunk(texts: list[str]) -> list[EncodedDoc]:
    return [encode_document(_worker_tok, t) for t in texts]


def encode_corpus(tok: TokenizerDef, texts: Sequence[str], threads: int = 1) -> list[EncodedDoc]:
    """Base-encode documents; ``threads > 1`` fans out to worker processes.

    Output order always follows input order, so results are identical for any
    worker count.
    """
    if threads <= 1 or len(texts) < 2 * threads:
        return [encode_document(tok, t) for t in texts]
    size = -(-len(texts) // (threads * 4))
    chunks = [list(texts[i : i + size]) for i in range(0, len(texts), size)]
    with ProcessPoolExecutor(threads, initializer=_init_worker, initargs=(tok,)) as ex:
        return [doc for part in ex.map(_encode_chunk, chunks) for doc in part]
