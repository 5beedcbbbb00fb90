"""Visibility patterns for the three architectures.

``True`` in a visibility matrix means the query row may attend to the key
column. Packed rows carry ``segment_ids`` (``-1`` marks padding) and
attention never crosses a segment boundary.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

MASK_KINDS = ("causal", "prefix", "full")


@dataclass(frozen=True)
class AttentionMask:
    visibility: np.ndarray
    kind: str
    prefix_len: int | tuple[int, ...] | None = None


def segment_offsets(segment_ids: np.ndarray) -> np.ndarray:
    """Position of each token relative to the start of its segment run."""
    seg = np.atleast_2d(segment_ids)
    t = seg.shape[-1]
    idx = np.arange(t)
    change = np.ones_like(seg, dtype=bool)
    change[:, 1:] = seg[:, 1:] != seg[:, :-1]
    start = np.maximum.accumulate(np.where(change, idx, 0), axis=1)
    return idx - start


def prefix_region(segment_ids: np.ndarray, prefix_lens: np.ndarray | None) -> np.ndarray:
    """Boolean ``[batch, len]``: token lies in its segment's bidirectional prefix."""
    seg = np.atleast_2d(segment_ids)
    if prefix_lens is None:
        return np.zeros(seg.shape, dtype=bool)
    plens = np.atleast_2d(np.asarray(prefix_lens, dtype=np.int64))
    safe = np.clip(seg, 0, plens.shape[1] - 1)
    limit = np.take_along_axis(plens, safe, axis=1)
    return (segment_offsets(seg) < limit) & (seg >= 0)


def decoder_visibility(segment_ids: np.ndarray, prefix_lens: np.ndarray | None):
    """Causal (plus optional prefix) self-visibility.

    Returns ``(visibility, bidirectional_pairs)``, both ``[batch, len, len]``.
    """
    seg = np.atleast_2d(segment_ids)
    t = seg.shape[1]
    same = seg[:, :, None] == seg[:, None, :]
    causal = np.tril(np.ones((t, t), dtype=bool))
    pre = prefix_region(seg, prefix_lens)
    bidi = same & pre[:, :, None] & pre[:, None, :]
    return (same & causal) | bidi, bidi


def encoder_visibility(segment_ids: np.ndarray) -> np.ndarray:
    seg = np.atleast_2d(segment_ids)
    return seg[:, :, None] == seg[:, None, :]


def cross_visibility(decoder_segments: np.ndarray, encoder_segments: np.ndarray) -> np.ndarray:
    dec = np.atleast_2d(decoder_segments)
    enc = np.atleast_2d(encoder_segments)
    return (dec[:, :, None] == enc[:, None, :]) & (enc[:, None, :] >= 0)


def build_mask(
    kind: str,
    seq_len: int,
    prefix_len: int | Sequence[int] | None = None,
    segment_ids: Sequence[int] | None = None,
) -> AttentionMask:
    """Single-row visibility matrix of the requested kind.

    For ``kind="prefix"`` the prefix length is measured from the start of each
    segment; pass one value per segment id to give segments different prefixes.
    """
    if kind not in MASK_KINDS:
        raise ValueError(f"unknown mask kind {kind!r}")
    if segment_ids is None:
        seg = np.zeros((1, seq_len), dtype=np.int64)
    else:
        seg = np.asarray(segment_ids, dtype=np.int64)[None, :]
        if seg.shape[1] != seq_len:
            raise ValueError(f"segment_ids has length {seg.shape[1]}, expected {seq_len}")
    if kind == "prefix":
        if prefix_len is None:
            raise ValueError("prefix mask requires prefix_len")
        plens = np.atleast_1d(np.asarray(prefix_len, dtype=np.int64))
        if np.any(plens < 0) or np.any(plens > seq_len):
            raise ValueError(f"prefix_len {prefix_len} out of range [0, {seq_len}]")
        n_seg = int(seg.max()) + 1 if seg.size else 1
        if plens.size == 1:
            plens = np.repeat(plens, max(n_seg, 1))
        vis, _ = decoder_visibility(seg, plens[None, :])
        stored = int(plens[0]) if np.ndim(prefix_len) == 0 else tuple(int(p) for p in plens)
        return AttentionMask(vis[0], kind, stored)
    if prefix_len is not None:
        raise ValueError(f"prefix_len is only valid for prefix masks, not {kind!r}")
    if kind == "causal":
        vis, _ = decoder_visibility(seg, None)
    else:
        vis = encoder_visibility(seg)
    return AttentionMask(vis[0], kind)
