"""Domain vocabulary adaptation for BPE tokenizers.

Mines frequent multi-token spans (n-tokens) from a domain corpus, swaps them in
for the rarest tokens of the base vocabulary, re-encodes text under the patched
vocabulary and initializes the recycled embedding rows.
"""

__version__ = "0.1.0"

from .corpus import Corpus, Document, EncodedDoc, encode_corpus, load_documents
from .embeddings import (
    EmbeddingMatrix,
    InitKind,
    InitStrategy,
    Role,
    build_patched_matrices,
    exp_weights,
    export_manifest,
    init_row,
)
from .errors import VocabAdaptError
from .miner import CandidateTable, NToken, count_freqs, count_overlaps, mine, prepare_n_tokens
from .patching import (
    PatchedVocab,
    SavingsReport,
    decode_patched,
    encode_patched,
    encode_patched_optimal,
    measure_ids,
    measure_savings,
)
from .selection import (
    ScoringMode,
    SelectionMode,
    VocabPatch,
    build_patch,
    pick_removable,
    select_n_tokens,
)
from .tokenizer import TokenizerDef, TokenSeq, decode_base, encode_base, load_tokenizer

__all__ = [
    "CandidateTable",
    "Corpus",
    "Document",
    "EmbeddingMatrix",
    "EncodedDoc",
    "InitKind",
    "InitStrategy",
    "NToken",
    "PatchedVocab",
    "Role",
    "SavingsReport",
    "ScoringMode",
    "SelectionMode",
    "TokenSeq",
    "TokenizerDef",
    "VocabAdaptError",
    "VocabPatch",
    "build_patch",
    "build_patched_matrices",
    "count_freqs",
    "count_overlaps",
    "decode_base",
    "decode_patched",
    "encode_base",
    "encode_corpus",
    "encode_patched",
    "encode_patched_optimal",
    "exp_weights",
    "export_manifest",
    "init_row",
    "load_documents",
    "load_tokenizer",
    "measure_ids",
    "measure_savings",
    "mine",
    "pick_removable",
    "prepare_n_tokens",
    "select_n_tokens",
]
