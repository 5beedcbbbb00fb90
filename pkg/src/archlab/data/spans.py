"""Span corruption with sentinel tokens, and the MLM batch layouts built on it."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..model.config import ED, ArchitectureKind
from .batch import PAD_SEGMENT, PackedBatch
from .vocab import EOS_ID, PAD_ID, Vocab


@dataclass(frozen=True)
class SpanCorruption:
    corrupted_input: list[int]
    targets: list[int]
    n_masked: int
    spans: tuple[tuple[int, int], ...]

    @property
    def n_spans(self) -> int:
        return len(self.spans)


def span_counts(length: int, mask_rate: float, mean_span: float) -> tuple[int, int]:
    """``(n_masked, n_spans)`` for a sequence of ``length`` tokens.

    The span count is clamped to the masked-token budget so every span has at
    least one token.
    """
    n_masked = max(1, int(round(mask_rate * length)))
    n_spans = max(1, int(round(mask_rate * length / mean_span)))
    return n_masked, min(n_spans, n_masked)


def corrupted_lengths(length: int, mask_rate: float = 0.15, mean_span: float = 3.0) -> tuple[int, int]:
    """Lengths of (corrupted input, targets) produced from ``length`` raw tokens."""
    n_masked, n_spans = span_counts(length, mask_rate, mean_span)
    return length - n_masked + n_spans, n_masked + n_spans + 1


def raw_length_for_budget(seq_len: int, mask_rate: float = 0.15, mean_span: float = 3.0) -> int:
    """Longest raw sequence whose corrupted input plus targets fit in ``seq_len``.

    For ``seq_len=626`` at the default rate and span this is 569 raw tokens,
    giving 512 input and 114 target tokens.
    """
    best = 0
    for length in range(2, seq_len + 1):
        n_in, n_tg = corrupted_lengths(length, mask_rate, mean_span)
        if n_in + n_tg <= seq_len:
            best = length
    if best == 0:
        raise ValueError(f"seq_len={seq_len} cannot hold any corrupted example")
    return best


def apply_spans(tokens: Sequence[int], spans: Sequence[tuple[int, int]], vocab: Vocab) -> SpanCorruption:
    """Replace ``(start, length)`` spans with sentinels 0, 1, ... in order."""
    toks = [int(t) for t in tokens]
    spans = tuple(sorted((int(s), int(n)) for s, n in spans))
    if len(spans) + 1 > vocab.n_sentinels:
        raise ValueError(f"{len(spans)} spans need {len(spans) + 1} sentinels, vocab has {vocab.n_sentinels}")
    inp: list[int] = []
    tgt: list[int] = []
    pos = 0
    for k, (start, n) in enumerate(spans):
        if n < 1 or start < pos or start + n > len(toks):
            raise ValueError(f"invalid span {(start, n)}")
        if k > 0 and start == pos:
            raise ValueError("spans must not be adjacent")
        s = vocab.sentinel(k)
        inp.extend(toks[pos:start])
        inp.append(s)
        tgt.append(s)
        tgt.extend(toks[start : start + n])
        pos = start + n
    inp.extend(toks[pos:])
    tgt.append(vocab.sentinel(len(spans)))
    return SpanCorruption(inp, tgt, sum(n for _, n in spans), spans)


def _composition(total: int, parts: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random split of ``total`` into ``parts`` positive integers."""
    if parts == 1:
        return np.array([total])
    cuts = np.sort(rng.choice(np.arange(1, total), size=parts - 1, replace=False))
    return np.diff(np.concatenate([[0], cuts, [total]]))


def _weak_composition(total: int, parts: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random split of ``total`` into ``parts`` non-negative integers."""
    bars = np.sort(rng.choice(total + parts - 1, size=parts - 1, replace=False))
    edges = np.concatenate([[-1], bars, [total + parts - 1]])
    return np.diff(edges) - 1


def corrupt_spans(
    tokens: Sequence[int],
    mask_rate: float,
    mean_span: float,
    vocab: Vocab,
    rng: np.random.Generator,
) -> SpanCorruption:
    """Mask ``round(mask_rate * len)`` tokens in non-adjacent spans.

    Span lengths are a uniform random composition of the masked budget and
    the gaps between spans a uniform composition of the rest (inner gaps at
    least one token), so every valid placement is equally likely.
    """
    length = len(tokens)
    if length < 2 * mean_span:
        raise ValueError(f"sequence of {length} tokens too short for mean span {mean_span}")
    n_masked, n_spans = span_counts(length, mask_rate, mean_span)
    n_keep = length - n_masked
    if n_keep < n_spans - 1:
        raise ValueError("sequence too dense to corrupt")
    if n_spans + 1 > vocab.n_sentinels:
        raise ValueError(f"{n_spans} spans need {n_spans + 1} sentinels, vocab has {vocab.n_sentinels}")
    lengths = _composition(n_masked, n_spans, rng)
    gaps = _weak_composition(n_keep - (n_spans - 1), n_spans + 1, rng)
    gaps[1:-1] += 1
    spans = []
    pos = 0
    for k in range(n_spans):
        pos += int(gaps[k])
        spans.append((pos, int(lengths[k])))
        pos += int(lengths[k])
    return apply_spans(tokens, spans, vocab)


def decorrupt(corrupted_input: Sequence[int], targets: Sequence[int], vocab: Vocab) -> list[int]:
    """Substitute every sentinel in the input with its span from ``targets``."""
    fills: dict[int, list[int]] = {}
    current = None
    for t in targets:
        t = int(t)
        if vocab.is_sentinel(t):
            current = t
            fills[t] = []
        elif current is None:
            raise ValueError("targets must start with a sentinel")
        else:
            fills[current].append(t)
    out: list[int] = []
    for t in corrupted_input:
        t = int(t)
        out.extend(fills[t] if vocab.is_sentinel(t) else [t])
    return out


def make_mlm_batch(
    examples: Sequence[SpanCorruption],
    arch: ArchitectureKind | str,
    seq_len: int,
    eos_id: int = EOS_ID,
    pad_id: int = PAD_ID,
) -> PackedBatch:
    """Lay corrupted examples out for ``arch``.

    Decoder-only rows hold ``corrupted_input ++ targets`` with the loss on the
    target region; ND marks the input region as the prefix. Encoder-decoder
    rows send the corrupted input to the encoder and the targets to the
    decoder. Either way the trained positions predict ``targets[1:] + [eos]``
    and the row budget ``seq_len`` bounds input plus target tokens.
    """
    arch = ArchitectureKind.parse(arch)
    if not examples:
        raise ValueError("no examples")
    for ex in examples:
        if len(ex.corrupted_input) + len(ex.targets) > seq_len:
            raise ValueError(
                f"corrupted example ({len(ex.corrupted_input)} + {len(ex.targets)}) overflows seq_len={seq_len}"
            )
    n = len(examples)
    if arch is ED:
        te = max(len(ex.corrupted_input) for ex in examples)
        td = max(len(ex.targets) for ex in examples)
        enc = np.full((n, te), pad_id, dtype=np.int64)
        enc_seg = np.full((n, te), PAD_SEGMENT, dtype=np.int64)
        dec = np.full((n, td), pad_id, dtype=np.int64)
        tgt = np.full((n, td), pad_id, dtype=np.int64)
        seg = np.full((n, td), PAD_SEGMENT, dtype=np.int64)
        for r, ex in enumerate(examples):
            ni, nt = len(ex.corrupted_input), len(ex.targets)
            enc[r, :ni] = ex.corrupted_input
            enc_seg[r, :ni] = 0
            dec[r, :nt] = ex.targets
            tgt[r, :nt] = list(ex.targets[1:]) + [eos_id]
            seg[r, :nt] = 0
        return PackedBatch(dec, tgt, seg == 0, seg, "MLM", encoder_ids=enc, encoder_segments=enc_seg)
    inp = np.full((n, seq_len), pad_id, dtype=np.int64)
    tgt = np.full((n, seq_len), pad_id, dtype=np.int64)
    seg = np.full((n, seq_len), PAD_SEGMENT, dtype=np.int64)
    loss = np.zeros((n, seq_len), dtype=bool)
    prefix = np.zeros((n, 1), dtype=np.int64)
    for r, ex in enumerate(examples):
        row = list(ex.corrupted_input) + list(ex.targets)
        ni, total = len(ex.corrupted_input), len(row)
        inp[r, :total] = row
        tgt[r, :total] = row[1:] + [eos_id]
        seg[r, :total] = 0
        loss[r, ni:total] = True
        prefix[r, 0] = ni
    return PackedBatch(
        inp, tgt, loss, seg, "MLM", prefix_lens=prefix if arch.value == "ND" else None
    )
