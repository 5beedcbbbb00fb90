"""Objective-specific batch sampling from a token stream."""
from __future__ import annotations

import numpy as np

from ..model.config import ED, ArchitectureKind
from .batch import PackedBatch
from .objectives import ObjectiveKind
from .packing import pack_flm, pack_plm, stack_batches
from .spans import corrupt_spans, make_mlm_batch, raw_length_for_budget
from .vocab import Vocab


def window(stream: np.ndarray, start: int, n: int) -> np.ndarray:
    return np.take(stream, np.arange(start, start + n), mode="wrap")


class BatchBuilder:
    """Builds batches of roughly ``batch_size * seq_len`` seen tokens.

    PLM batches use half as many rows, each holding two examples, so every
    objective sees the same number of tokens per step.
    """

    def __init__(self, stream, objective, arch, seq_len: int, batch_size: int, vocab: Vocab):
        self.stream = np.asarray(stream, dtype=np.int64)
        if self.stream.size == 0:
            raise ValueError("empty token stream")
        self.objective = ObjectiveKind.parse(objective)
        self.arch = ArchitectureKind.parse(arch)
        self.seq_len = seq_len
        self.batch_size = batch_size
        self.vocab = vocab
        if self.objective.name == "MLM":
            self.raw_len = raw_length_for_budget(seq_len, self.objective.mask_rate, self.objective.mean_span)
        else:
            self.raw_len = seq_len + 1

    @property
    def n_rows(self) -> int:
        if self.objective.name == "PLM":
            return max(1, self.batch_size // 2)
        return self.batch_size

    def _starts(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.integers(0, self.stream.size, size=n)

    def build(self, starts, rng: np.random.Generator) -> PackedBatch:
        L = self.seq_len
        name = self.objective.name
        if name == "FLM":
            rows = [pack_flm(window(self.stream, s, L + 1), L, 1, self.vocab.eos_id) for s in starts]
            return stack_batches(rows)
        if name == "PLM":
            pairs = [
                (window(self.stream, a, L + 1), window(self.stream, b, L + 1))
                for a, b in zip(starts[0::2], starts[1::2])
            ]
            return pack_plm(pairs, L, rng, encoder_decoder=self.arch is ED, eos_id=self.vocab.eos_id)
        examples = [
            corrupt_spans(window(self.stream, s, self.raw_len), self.objective.mask_rate,
                          self.objective.mean_span, self.vocab, rng)
            for s in starts
        ]
        return make_mlm_batch(examples, self.arch, L, eos_id=self.vocab.eos_id)

    def _n_starts(self) -> int:
        return 2 * self.n_rows if self.objective.name == "PLM" else self.n_rows

    def sample(self, rng: np.random.Generator) -> PackedBatch:
        return self.build(self._starts(rng, self._n_starts()), rng)

    def fixed_batches(self, n_batches: int, seed: int = 0) -> list[PackedBatch]:
        """Deterministic batches whose windows tile the stream evenly."""
        rng = np.random.default_rng(seed)
        k = self._n_starts()
        total = n_batches * k
        starts = (np.arange(total) * max(1, self.stream.size // total)) % self.stream.size
        return [self.build(starts[i * k : (i + 1) * k], rng) for i in range(n_batches)]
