"""Multi-head attention with an explicit cache for the backward pass."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import masked_softmax, masked_softmax_backward


@dataclass
class AttentionCache:
    x_q: np.ndarray
    x_kv: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    probs: np.ndarray
    ctx: np.ndarray
    scale: float


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def attention(
    x_q: np.ndarray,
    x_kv: np.ndarray,
    wq: np.ndarray,
    wk: np.ndarray,
    wv: np.ndarray,
    wo: np.ndarray,
    n_heads: int,
    visibility: np.ndarray,
    bias: np.ndarray | None = None,
) -> tuple[np.ndarray, AttentionCache]:
    """Scaled dot-product attention over ``(batch, len, d_model)`` inputs.

    ``visibility`` is ``(batch, q_len, kv_len)``. Query rows that see no key
    at all (an empty encoder segment, say) produce a zero context vector.
    """
    q = _split_heads(x_q @ wq, n_heads)
    k = _split_heads(x_kv @ wk, n_heads)
    v = _split_heads(x_kv @ wv, n_heads)
    scale = q.dtype.type(1.0 / np.sqrt(q.shape[-1]))
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    if bias is not None:
        scores = scores + bias
    vis = np.asarray(visibility, dtype=bool)[:, None, :, :]
    has_any = vis.any(axis=-1, keepdims=True)
    if has_any.all():
        probs, _ = masked_softmax(scores, vis)
    else:
        probs, _ = masked_softmax(scores, vis | ~has_any)
        probs = probs * has_any
    ctx = _merge_heads(probs @ v)
    out = ctx @ wo
    return out, AttentionCache(x_q, x_kv, q, k, v, probs, ctx, scale)


def attention_backward(dout: np.ndarray, cache: AttentionCache, wq, wk, wv, wo, n_heads: int):
    """Returns ``(dx_q, dx_kv, dwq, dwk, dwv, dwo, dscores)``.

    ``dscores`` is the cotangent of the pre-softmax scores (bias included),
    which the caller scatters into the relative-position table.
    """
    d = dout.shape[-1]
    dwo = cache.ctx.reshape(-1, cache.ctx.shape[-1]).T @ dout.reshape(-1, d)
    dctx = _split_heads(dout @ wo.T, n_heads)
    dprobs = dctx @ cache.v.transpose(0, 1, 3, 2)
    dv = cache.probs.transpose(0, 1, 3, 2) @ dctx
    dscores = masked_softmax_backward(cache.probs, dprobs)
    dq = (dscores @ cache.k) * cache.scale
    dk = (dscores.transpose(0, 1, 3, 2) @ cache.q) * cache.scale
    dq2 = _merge_heads(dq)
    dk2 = _merge_heads(dk)
    dv2 = _merge_heads(dv)
    dm = cache.x_q.shape[-1]
    xq2 = cache.x_q.reshape(-1, dm)
    xkv2 = cache.x_kv.reshape(-1, dm)
    dwq = xq2.T @ dq2.reshape(-1, dq2.shape[-1])
    dwk = xkv2.T @ dk2.reshape(-1, dk2.shape[-1])
    dwv = xkv2.T @ dv2.reshape(-1, dv2.shape[-1])
    dx_q = dq2 @ wq.T
    dx_kv = dk2 @ wk.T + dv2 @ wv.T
    return dx_q, dx_kv, dwq, dwk, dwv, dwo, dscores
