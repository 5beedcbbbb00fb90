from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .vocab import join_documents

HELDOUT_FRACTION = 0.02
PATTERN_ALPHABET = "abcdefgh"


def read_corpus(path: str | Path) -> list[str]:
    """Documents of a UTF-8 text file, separated by blank lines."""
    text = Path(path).read_text(encoding="utf-8")
    docs = [d.strip("\n") for d in re.split(r"\n\s*\n", text)]
    return [d for d in docs if d.strip()]


def write_corpus(documents: Sequence[str], path: str | Path) -> None:
    Path(path).write_text("\n\n".join(documents) + "\n", encoding="utf-8")


def pattern_document(rng: np.random.Generator, alphabet: str = PATTERN_ALPHABET,
                     period: tuple[int, int] = (2, 4), length: tuple[int, int] = (24, 64)) -> str:
    k = int(rng.integers(period[0], period[1] + 1))
    motif = "".join(rng.choice(list(alphabet), size=k, replace=False))
    n = int(rng.integers(length[0], length[1] + 1))
    return (motif * (n // k + 1))[:n]


def synthetic_pattern_corpus(n_docs: int, seed: int, alphabet: str = PATTERN_ALPHABET,
                             period: tuple[int, int] = (2, 4),
                             length: tuple[int, int] = (24, 64)) -> list[str]:
    """Documents that repeat a random motif of distinct symbols.

    Within a document the next symbol is fully determined once one period has
    been seen, so a model that learns the structure beats the unigram entropy.
    """
    rng = np.random.default_rng(seed)
    return [pattern_document(rng, alphabet, period, length) for _ in range(n_docs)]


@dataclass(frozen=True)
class TokenCorpus:
    """Token stream split into a training part and a held-out tail."""

    train: np.ndarray
    heldout: np.ndarray

    @classmethod
    def from_documents(cls, documents: Sequence[str], heldout_fraction: float = HELDOUT_FRACTION) -> "TokenCorpus":
        if not documents:
            raise ValueError("empty corpus")
        stream = join_documents(documents)
        n_held = max(1, int(round(len(stream) * heldout_fraction)))
        return cls(stream[:-n_held], stream[-n_held:])

    @property
    def n_tokens(self) -> int:
        return int(self.train.size + self.heldout.size)
