"""Batches of prompted (input, answer) pairs for finetuning and scoring."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..model.config import ED, ND, ArchitectureKind
from .batch import PAD_SEGMENT, PackedBatch
from .vocab import EOS_ID, PAD_ID


class RenderTooLong(ValueError):
    pass


def prompt_row_length(prompt: Sequence[int], answer: Sequence[int], arch) -> int:
    """Decoder-stream length of one pair; for ED the encoder holds the prompt."""
    if ArchitectureKind.parse(arch) is ED:
        return max(len(prompt), len(answer) + 1)
    return len(prompt) + len(answer) + 1


def prompt_batch(
    pairs: Sequence[tuple[Sequence[int], Sequence[int]]],
    arch: ArchitectureKind | str,
    seq_len: int | None = None,
    eos_id: int = EOS_ID,
    pad_id: int = PAD_ID,
) -> PackedBatch:
    """Lay out ``(prompt, answer)`` token pairs, one pair per row.

    Decoder-only rows read ``prompt ++ [eos] ++ answer``: the ``eos`` separates
    the two parts and the trained positions (from the separator on) predict
    ``answer ++ [eos]``. ND rows mark the whole prompt as the prefix. ED rows
    send the prompt to the encoder and ``[eos] ++ answer`` to the decoder.
    ``meta["answer_start"]`` holds each row's first trained position.
    """
    arch = ArchitectureKind.parse(arch)
    if not pairs:
        raise ValueError("no pairs")
    for p, a in pairs:
        if seq_len is not None and prompt_row_length(p, a, arch) > seq_len:
            raise RenderTooLong(f"render too long: {len(p)} + {len(a)} tokens for seq_len={seq_len}")
    n = len(pairs)
    if arch is ED:
        te = max(1, max(len(p) for p, _ in pairs))
        td = max(len(a) + 1 for _, a in pairs)
        enc = np.full((n, te), pad_id, dtype=np.int64)
        enc_seg = np.full((n, te), PAD_SEGMENT, dtype=np.int64)
        dec = np.full((n, td), pad_id, dtype=np.int64)
        tgt = np.full((n, td), pad_id, dtype=np.int64)
        seg = np.full((n, td), PAD_SEGMENT, dtype=np.int64)
        for r, (p, a) in enumerate(pairs):
            enc[r, : len(p)] = p
            enc_seg[r, : len(p)] = 0
            dec[r, : len(a) + 1] = [eos_id, *a]
            tgt[r, : len(a) + 1] = [*a, eos_id]
            seg[r, : len(a) + 1] = 0
        return PackedBatch(
            dec, tgt, seg == 0, seg, "MTF", encoder_ids=enc, encoder_segments=enc_seg,
            meta={"answer_start": [0] * n},
        )
    width = max(len(p) + len(a) + 1 for p, a in pairs)
    inp = np.full((n, width), pad_id, dtype=np.int64)
    tgt = np.full((n, width), pad_id, dtype=np.int64)
    seg = np.full((n, width), PAD_SEGMENT, dtype=np.int64)
    loss = np.zeros((n, width), dtype=bool)
    prefix = np.zeros((n, 1), dtype=np.int64)
    starts = []
    for r, (p, a) in enumerate(pairs):
        row = [*p, eos_id, *a]
        inp[r, : len(row)] = row
        tgt[r, : len(row)] = row[1:] + [eos_id]
        seg[r, : len(row)] = 0
        loss[r, len(p) : len(row)] = True
        prefix[r, 0] = len(p)
        starts.append(len(p))
    return PackedBatch(
        inp, tgt, loss, seg, "MTF", prefix_lens=prefix if arch is ND else None,
        meta={"answer_start": starts},
    )


def with_empty_encoder(batch: PackedBatch, eos_id: int = EOS_ID) -> PackedBatch:
    """Attach the encoding of an empty input string, i.e. a lone ``eos``.

    Each decoder segment gets its own ``eos`` slot so packed segments stay
    independent.
    """
    if batch.prefix_lens is not None or batch.is_encoder_decoder:
        raise ValueError("empty-encoder routing needs a causal decoder batch")
    n = batch.shape[0]
    n_seg = max(1, int(batch.segment_ids.max()) + 1)
    ids = np.full((n, n_seg), eos_id, dtype=np.int64)
    seg = np.repeat(np.arange(n_seg, dtype=np.int64)[None], n, axis=0)
    return batch.with_encoder(ids, seg)
