"""Tokenization, objective pipelines and packed batches."""
from .batch import PackedBatch, dump_batch, load_batch, token_accounting
from .corpus import TokenCorpus, read_corpus, synthetic_pattern_corpus, write_corpus
from .objectives import FLM, MLM, PLM, ObjectiveKind, check_pair
from .packing import pack_flm, pack_plm, stack_batches
from .pipeline import BatchBuilder
from .spans import (
    SpanCorruption,
    apply_spans,
    corrupt_spans,
    corrupted_lengths,
    decorrupt,
    make_mlm_batch,
    raw_length_for_budget,
)
from .vocab import Vocab, detokenize, join_documents, tokenize

__all__ = [
    "BatchBuilder",
    "FLM",
    "MLM",
    "ObjectiveKind",
    "PLM",
    "PackedBatch",
    "SpanCorruption",
    "TokenCorpus",
    "Vocab",
    "apply_spans",
    "check_pair",
    "corrupt_spans",
    "corrupted_lengths",
    "decorrupt",
    "detokenize",
    "dump_batch",
    "join_documents",
    "load_batch",
    "make_mlm_batch",
    "pack_flm",
    "pack_plm",
    "raw_length_for_budget",
    "read_corpus",
    "stack_batches",
    "synthetic_pattern_corpus",
    "token_accounting",
    "tokenize",
    "write_corpus",
]
