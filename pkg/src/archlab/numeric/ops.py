"""Dense primitives with hand-derived backward rules.

Every forward function here is pure. Backward functions take the upstream
cotangent plus whatever the forward returned and produce partials of the
same shapes as the forward inputs.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class Precision(str, enum.Enum):
    HIGH = "high"
    LOW = "low"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float64 if self is Precision.HIGH else np.float32)


def as_tensor(x, precision: Precision | str = Precision.HIGH) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=Precision(precision).dtype)


@dataclass(frozen=True)
class GradResult:
    value: object
    partials: dict[str, np.ndarray] = field(default_factory=dict)


# ---------------------------------------------------------------- softmax


def softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=-1, keepdims=True)


def masked_softmax(logits: np.ndarray, visibility: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Softmax over the visible entries of the last axis.

    Returns ``(probs, log_normalizers)`` where ``log_normalizers`` is the log of
    the unshifted normalizer ``sum(exp(logits))`` over visible entries.
    """
    vis = np.asarray(visibility, dtype=bool)
    vis = np.broadcast_to(vis, logits.shape)
    if not vis.any(axis=-1).all():
        raise ValueError("fully masked row")
    masked = np.where(vis, logits, -np.inf)
    m = masked.max(axis=-1, keepdims=True)
    e = np.exp(masked - m)
    s = e.sum(axis=-1, keepdims=True)
    probs = e / s
    return probs, (m + np.log(s))[..., 0]


def masked_softmax_backward(
    probs: np.ndarray, dprobs: np.ndarray, dlog_normalizers: np.ndarray | None = None
) -> np.ndarray:
    dlogits = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    if dlog_normalizers is not None:
        dlogits = dlogits + dlog_normalizers[..., None] * probs
    return dlogits


# ---------------------------------------------------------------- rms norm


def rms_norm(x: np.ndarray, gain: np.ndarray, epsilon: float = 1e-6) -> np.ndarray:
    r = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + epsilon)
    return x * r * gain


def rms_norm_backward(
    dy: np.ndarray, x: np.ndarray, gain: np.ndarray, epsilon: float = 1e-6
) -> tuple[np.ndarray, np.ndarray]:
    r = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + epsilon)
    dgain = (dy * x * r).reshape(-1, x.shape[-1]).sum(axis=0)
    dxhat = dy * gain
    dx = r * dxhat - (r**3) * x * np.mean(dxhat * x, axis=-1, keepdims=True)
    return dx, dgain


# ---------------------------------------------------------------- gelu / geglu

_GELU_C = math.sqrt(2.0 / math.pi)


def _gelu_gate(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(s, 1 - s)`` with ``s = (1 + tanh(z)) / 2 = sigmoid(2z)``, both without cancellation."""
    z = 2.0 * _GELU_C * (u + 0.044715 * u**3)
    e = np.exp(-np.abs(z))
    lo, hi = e / (1.0 + e), 1.0 / (1.0 + e)
    pos = z >= 0
    return np.where(pos, hi, lo), np.where(pos, lo, hi)


def gelu(u: np.ndarray) -> np.ndarray:
    """Tanh-approximated GELU."""
    return u * _gelu_gate(u)[0]


def gelu_grad(u: np.ndarray) -> np.ndarray:
    s, s_c = _gelu_gate(u)
    return s + 2.0 * u * s * s_c * _GELU_C * (1.0 + 3 * 0.044715 * u * u)


def _check_geglu_shapes(x, w_gate, w_lin, w_out):
    d = x.shape[-1]
    if w_gate.ndim != 2 or w_gate.shape[0] != d or w_lin.shape != w_gate.shape:
        raise ValueError(f"geglu shape mismatch: x {x.shape}, gate {w_gate.shape}, lin {w_lin.shape}")
    if w_out.ndim != 2 or w_out.shape[0] != w_gate.shape[1]:
        raise ValueError(f"geglu shape mismatch: out {w_out.shape}")


def geglu(x: np.ndarray, w_gate: np.ndarray, w_lin: np.ndarray, w_out: np.ndarray) -> np.ndarray:
    _check_geglu_shapes(x, w_gate, w_lin, w_out)
    return (gelu(x @ w_gate) * (x @ w_lin)) @ w_out


def geglu_backward(dy, x, w_gate, w_lin, w_out):
    """Returns (dx, dw_gate, dw_lin, dw_out)."""
    a = x @ w_gate
    b = x @ w_lin
    ga = gelu(a)
    h = ga * b
    f = w_gate.shape[1]
    d_in = x.shape[-1]
    dy2 = dy.reshape(-1, dy.shape[-1])
    dw_out = h.reshape(-1, f).T @ dy2
    dh = dy @ w_out.T
    da = dh * b * gelu_grad(a)
    db = dh * ga
    x2 = x.reshape(-1, d_in)
    dw_gate = x2.T @ da.reshape(-1, f)
    dw_lin = x2.T @ db.reshape(-1, f)
    dx = da @ w_gate.T + db @ w_lin.T
    return dx, dw_gate, dw_lin, dw_out


# ---------------------------------------------------------------- relative bias


def relative_position_bucket(
    relative_position: np.ndarray, bidirectional: bool, n_buckets: int = 32, max_distance: int = 128
) -> np.ndarray:
    """Map ``key - query`` offsets to bucket ids.

    Half the buckets (per direction) hold exact small distances, the rest are
    log-spaced up to ``max_distance``. Without ``bidirectional`` every future
    offset collapses onto bucket 0.
    """
    if n_buckets < 2:
        raise ValueError("n_buckets must be >= 2")
    if max_distance <= 0:
        raise ValueError("max_distance must be > 0")
    rp = np.asarray(relative_position, dtype=np.int64)
    ret = np.zeros_like(rp)
    n = n_buckets
    if bidirectional:
        n //= 2
        ret += (rp > 0).astype(np.int64) * n
        rp = np.abs(rp)
    else:
        rp = np.maximum(-rp, 0)
    max_exact = n // 2
    if max_exact == 0:
        return ret
    is_small = rp < max_exact
    if max_distance <= max_exact:
        large = np.full_like(rp, n - 1)
    else:
        safe = np.maximum(rp, max_exact).astype(np.float64)
        large = max_exact + (
            np.log(safe / max_exact) / math.log(max_distance / max_exact) * (n - max_exact)
        ).astype(np.int64)
        large = np.minimum(large, n - 1)
    return ret + np.where(is_small, rp, large)


def relative_buckets(query_len: int, key_len: int, n_buckets: int, max_distance: int, bidirectional: bool):
    q = np.arange(query_len)[:, None]
    k = np.arange(key_len)[None, :]
    return relative_position_bucket(k - q, bidirectional, n_buckets, max_distance)


def relative_position_bias(
    query_len: int,
    key_len: int,
    n_buckets: int,
    max_distance: int,
    bidirectional: bool,
    bias_table: np.ndarray,
) -> np.ndarray:
    """Gather ``bias_table`` rows into a ``(heads, query_len, key_len)`` tensor."""
    buckets = relative_buckets(query_len, key_len, n_buckets, max_distance, bidirectional)
    return gather_bias(buckets, bias_table)


def gather_bias(buckets: np.ndarray, bias_table: np.ndarray) -> np.ndarray:
    """``buckets[..., q, k]`` -> ``bias[..., heads, q, k]``."""
    out = bias_table[buckets]
    return np.moveaxis(out, -1, -3)


def gather_bias_backward(dbias: np.ndarray, buckets: np.ndarray, n_buckets: int) -> np.ndarray:
    heads = dbias.shape[-3]
    db = np.moveaxis(dbias, -3, -1)
    flat_b = np.broadcast_to(buckets, db.shape[:-1]).ravel()
    flat_d = db.reshape(-1, heads)
    out = np.empty((n_buckets, heads), dtype=dbias.dtype)
    for h in range(heads):
        out[:, h] = np.bincount(flat_b, weights=flat_d[:, h], minlength=n_buckets)
    return out


# ---------------------------------------------------------------- dropout


def dropout_mask(shape, rate: float, rng: np.random.Generator, dtype) -> np.ndarray:
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / dtype.type(1.0 - rate)
