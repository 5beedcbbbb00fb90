from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

PAD_ID = 0
EOS_ID = 1
BYTE_OFFSET = 2


@dataclass(frozen=True)
class Vocab:
    """Byte-level vocabulary: pad, eos, 256 byte ids, then sentinels at the top."""

    size: int = 512
    n_sentinels: int = 64

    def __post_init__(self):
        if self.n_sentinels < 1:
            raise ValueError("need at least one sentinel")
        if self.size < 256 + self.n_sentinels + BYTE_OFFSET:
            raise ValueError(
                f"vocab size {self.size} too small for 256 bytes + {self.n_sentinels} sentinels + 2 specials"
            )

    pad_id = PAD_ID
    eos_id = EOS_ID

    @property
    def first_sentinel(self) -> int:
        return self.size - self.n_sentinels

    def sentinel(self, k: int) -> int:
        if not 0 <= k < self.n_sentinels:
            raise ValueError(f"sentinel index {k} out of range (have {self.n_sentinels})")
        return self.first_sentinel + k

    def is_sentinel(self, ids) -> np.ndarray:
        ids = np.asarray(ids)
        return (ids >= self.first_sentinel) & (ids < self.size)

    def is_byte(self, ids) -> np.ndarray:
        ids = np.asarray(ids)
        return (ids >= BYTE_OFFSET) & (ids < BYTE_OFFSET + 256)


def tokenize(text: bytes | str, vocab: Vocab | None = None) -> list[int]:
    if isinstance(text, str):
        text = text.encode("utf-8")
    return [b + BYTE_OFFSET for b in text]


def detokenize(tokens: Iterable[int], vocab: Vocab | None = None, skip_special: bool = False) -> bytes:
    out = bytearray()
    for t in tokens:
        t = int(t)
        if BYTE_OFFSET <= t < BYTE_OFFSET + 256:
            out.append(t - BYTE_OFFSET)
        elif not skip_special:
            raise ValueError(f"token {t} is not a byte token")
    return bytes(out)


def join_documents(documents: Sequence[bytes | str], vocab: Vocab | None = None) -> np.ndarray:
    """Tokenize each document and terminate it with eos."""
    stream: list[int] = []
    for doc in documents:
        stream.extend(tokenize(doc))
        stream.append(EOS_ID)
    return np.asarray(stream, dtype=np.int64)
