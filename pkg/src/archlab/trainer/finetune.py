"""Multitask prompted finetuning over a mixture of tasks."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..data.prompts import prompt_batch, prompt_row_length
from ..data.vocab import Vocab, tokenize
from ..optim import LrSchedule
from .checkpoint import Checkpoint
from .stage import FINETUNE, TrainingStage, train_loop

MAX_SKIPPED_FRACTION = 0.10
DEFAULT_TASK_CAP = 500_000
FINETUNE_LR = 0.001


class TaskMixture:
    """Rendered (prompt, answer) token pairs per task with proportional sampling.

    A task's sampling weight is its pair count, capped at ``cap``. Pairs that
    do not fit ``seq_len`` are dropped and counted.
    """

    def __init__(self, tasks: Sequence, arch, seq_len: int, vocab: Vocab, cap: int = DEFAULT_TASK_CAP):
        if not tasks:
            raise ValueError("empty task mixture")
        self.names: list[str] = []
        self.pairs: list[list[tuple[list[int], list[int]]]] = []
        self.n_rendered = 0
        self.n_skipped = 0
        for task in tasks:
            fitting = []
            for text, answer in task.training_pairs():
                p, a = tokenize(text, vocab), tokenize(answer, vocab)
                self.n_rendered += 1
                if prompt_row_length(p, a, arch) > seq_len:
                    self.n_skipped += 1
                    continue
                fitting.append((p, a))
            if fitting:
                self.names.append(task.name)
                self.pairs.append(fitting)
        if self.n_skipped > MAX_SKIPPED_FRACTION * self.n_rendered or not self.pairs:
            raise ValueError(
                f"{self.n_skipped} of {self.n_rendered} prompted examples overflow seq_len={seq_len}"
            )
        sizes = np.array([min(len(p), cap) for p in self.pairs], dtype=np.float64)
        self.weights = sizes / sizes.sum()

    def sample(self, rng: np.random.Generator, n: int) -> list[tuple[list[int], list[int]]]:
        tasks = rng.choice(len(self.pairs), size=n, p=self.weights)
        return [self.pairs[t][int(rng.integers(len(self.pairs[t])))] for t in tasks]

    def fixed(self, n: int) -> list[tuple[list[int], list[int]]]:
        flat = [pair for group in self.pairs for pair in group]
        step = max(1, len(flat) // n)
        return flat[::step][:n]


def multitask_finetune(
    ckpt: Checkpoint,
    tasks: Sequence,
    budget: int,
    dropout: float = 0.1,
    seed: int = 0,
    seq_len: int = 64,
    batch_size: int = 8,
    cap: int = DEFAULT_TASK_CAP,
    schedule: LrSchedule | None = None,
    metrics_sink=None,
    marks=(),
    on_mark=None,
) -> Checkpoint:
    """Finetune on prompted pairs in the checkpoint's own architecture.

    The loss covers only answer tokens (and the closing ``eos``).
    """
    stage = TrainingStage(
        ckpt.arch, FINETUNE, budget, schedule=schedule or LrSchedule.fixed(FINETUNE_LR),
        dropout=dropout, seed=seed, seq_len=seq_len, batch_size=batch_size,
    )
    vocab = Vocab(ckpt.config.vocab_size)
    mixture = TaskMixture(tasks, ckpt.arch, seq_len, vocab, cap)
    validation = [prompt_batch(mixture.fixed(batch_size), ckpt.arch)] if stage.validation_batches else []

    def next_batch(rng):
        return prompt_batch(mixture.sample(rng, batch_size), ckpt.arch)

    extra = {"tasks": mixture.names, "skipped_examples": mixture.n_skipped, "task_cap": cap}
    return train_loop(ckpt, stage, next_batch, validation, metrics_sink, extra, marks, on_mark)
