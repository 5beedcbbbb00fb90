"""Dense (FLM) and complementary-prefix (PLM) packing."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .batch import PAD_SEGMENT, PackedBatch
from .vocab import EOS_ID, PAD_ID


def pack_flm(stream: Sequence[int], seq_len: int, batch_size: int, eos_id: int = EOS_ID) -> PackedBatch:
    """Cut ``batch_size`` consecutive rows of ``seq_len`` tokens from ``stream``.

    Targets are the stream shifted by one, so a row's last target is the
    first token of the next row. When the stream holds exactly
    ``batch_size * seq_len`` tokens the final target is ``eos`` (end of stream).
    """
    s = np.asarray(stream, dtype=np.int64)
    need = batch_size * seq_len
    if seq_len < 1 or batch_size < 1:
        raise ValueError("seq_len and batch_size must be positive")
    if s.size < need:
        raise ValueError(f"insufficient data: need {need} tokens, stream has {s.size}")
    inputs = s[:need]
    targets = s[1 : need + 1]
    if targets.size < need:
        targets = np.append(targets, eos_id)
    return PackedBatch(
        input_ids=inputs.reshape(batch_size, seq_len),
        target_ids=targets.reshape(batch_size, seq_len),
        loss_mask=np.ones((batch_size, seq_len), dtype=bool),
        segment_ids=np.zeros((batch_size, seq_len), dtype=np.int64),
        objective="FLM",
    )


def _example_io(example: Sequence[int], seq_len: int, eos_id: int) -> tuple[np.ndarray, np.ndarray]:
    ex = np.asarray(example, dtype=np.int64)
    if ex.size < seq_len:
        raise ValueError(f"example of length {ex.size} shorter than seq_len={seq_len}")
    inputs = ex[:seq_len]
    targets = ex[1 : seq_len + 1]
    if targets.size < seq_len:
        targets = np.append(targets, eos_id)
    return inputs, targets


def pack_plm(
    examples: Sequence[tuple[Sequence[int], Sequence[int]]],
    seq_len: int,
    rng: np.random.Generator,
    encoder_decoder: bool = False,
    eos_id: int = EOS_ID,
) -> PackedBatch:
    """Pack example pairs with complementary prefixes ``i`` and ``seq_len - i``.

    ``i`` is drawn uniformly from ``[1, seq_len]`` per pair. Each example
    contributes ``seq_len`` seen tokens and ``seq_len - prefix`` trained ones,
    so every packed row trains on exactly ``seq_len`` of its ``2 * seq_len``
    tokens. A token at index ``seq_len`` of an example, when present, is used
    as the final target; otherwise the final target is ``eos``.

    With ``encoder_decoder`` the prefixes of both examples go to the encoder
    stream and the suffixes to the decoder stream (one row of ``seq_len``
    each); otherwise both examples sit side by side in one decoder-only row
    of ``2 * seq_len`` with per-segment prefix visibility.
    """
    if not examples:
        raise ValueError("no examples to pack")
    rows = []
    for a, b in examples:
        i = int(rng.integers(1, seq_len + 1))
        rows.append((_example_io(a, seq_len, eos_id), _example_io(b, seq_len, eos_id), (i, seq_len - i)))
    if encoder_decoder:
        return _pack_plm_ed(rows, seq_len)
    n = len(rows)
    width = 2 * seq_len
    inp = np.empty((n, width), dtype=np.int64)
    tgt = np.empty((n, width), dtype=np.int64)
    loss = np.empty((n, width), dtype=bool)
    seg = np.repeat(np.repeat(np.arange(2), seq_len)[None], n, axis=0)
    prefix = np.empty((n, 2), dtype=np.int64)
    offs = np.arange(seq_len)
    for r, ((ia, ta), (ib, tb), (pa, pb)) in enumerate(rows):
        inp[r] = np.concatenate([ia, ib])
        tgt[r] = np.concatenate([ta, tb])
        loss[r] = np.concatenate([offs >= pa, offs >= pb])
        prefix[r] = (pa, pb)
    return PackedBatch(inp, tgt, loss, seg, "PLM", prefix_lens=prefix)


def _pack_plm_ed(rows, seq_len: int) -> PackedBatch:
    n = len(rows)
    enc = np.empty((n, seq_len), dtype=np.int64)
    enc_seg = np.empty((n, seq_len), dtype=np.int64)
    dec = np.empty((n, seq_len), dtype=np.int64)
    tgt = np.empty((n, seq_len), dtype=np.int64)
    dec_seg = np.empty((n, seq_len), dtype=np.int64)
    prefix = np.empty((n, 2), dtype=np.int64)
    for r, ((ia, ta), (ib, tb), (pa, pb)) in enumerate(rows):
        enc[r] = np.concatenate([ia[:pa], ib[:pb]])
        enc_seg[r] = np.repeat([0, 1], [pa, pb])
        dec[r] = np.concatenate([ia[pa:], ib[pb:]])
        tgt[r] = np.concatenate([ta[pa:], tb[pb:]])
        dec_seg[r] = np.repeat([0, 1], [seq_len - pa, seq_len - pb])
        prefix[r] = (pa, pb)
    return PackedBatch(
        dec, tgt, np.ones((n, seq_len), dtype=bool), dec_seg, "PLM",
        prefix_lens=prefix, encoder_ids=enc, encoder_segments=enc_seg,
    )


def stack_batches(batches: Sequence[PackedBatch], pad_id: int = PAD_ID) -> PackedBatch:
    """Concatenate rows of same-objective batches, right-padding to a common width."""
    if not batches:
        raise ValueError("nothing to stack")

    def pad(arrs, value):
        width = max(a.shape[1] for a in arrs)
        return np.concatenate(
            [np.pad(a, ((0, 0), (0, width - a.shape[1])), constant_values=value) for a in arrs]
        )

    first = batches[0]
    kw = {}
    if first.prefix_lens is not None:
        kw["prefix_lens"] = pad([b.prefix_lens for b in batches], 0)
    if first.encoder_ids is not None:
        kw["encoder_ids"] = pad([b.encoder_ids for b in batches], pad_id)
        kw["encoder_segments"] = pad([b.encoder_segments for b in batches], PAD_SEGMENT)
    return PackedBatch(
        input_ids=pad([b.input_ids for b in batches], pad_id),
        target_ids=pad([b.target_ids for b in batches], pad_id),
        loss_mask=pad([b.loss_mask for b in batches], False),
        segment_ids=pad([b.segment_ids for b in batches], PAD_SEGMENT),
        objective=first.objective,
        **kw,
    )
