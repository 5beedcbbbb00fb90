"""Finite-difference verification of the hand-written backward rules.

Each registered op exposes a forward returning one or more arrays and a
backward mapping output cotangents to input partials. ``grad_check`` projects
the outputs onto a random cotangent (seeded) and compares the analytic
vector-Jacobian product with a central-difference one.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import ops
from .attention import attention, attention_backward
from .ops import GradResult

FD_STEP = 1e-5
# Denominator floor for relative error; keeps round-off on near-zero partials
# from dominating the metric.
REL_FLOOR = 1e-6


@dataclass(frozen=True)
class OpSpec:
    forward: Callable[..., object]
    backward: Callable[[Mapping[str, np.ndarray], tuple], dict]
    wrt: tuple[str, ...]


_REGISTRY: dict[str, OpSpec] = {}


def register_op(name: str, forward, backward, wrt) -> None:
    _REGISTRY[name] = OpSpec(forward, backward, tuple(wrt))


def registered_ops() -> list[str]:
    return sorted(_REGISTRY)


def _get(name: str) -> OpSpec:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(f"no backward rule registered for op {name!r}") from None


def _as_tuple(out) -> tuple:
    return out if isinstance(out, tuple) else (out,)


def _active(spec: OpSpec, inputs: Mapping[str, object]) -> list[str]:
    return [n for n in spec.wrt if inputs.get(n) is not None]


def value_and_grad(op_name: str, inputs: Mapping[str, object], cotangents) -> GradResult:
    spec = _get(op_name)
    wrt = _active(spec, inputs)
    value = spec.forward(**inputs)
    partials = spec.backward(inputs, _as_tuple(cotangents))
    for name in wrt:
        if partials[name].shape != np.shape(inputs[name]):
            raise AssertionError(f"{op_name}: partial for {name} has shape {partials[name].shape}")
    return GradResult(value, {k: partials[k] for k in wrt})


def numerical_gradient(f: Callable[[], float], x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences of ``f()`` w.r.t. ``x``, perturbing ``x`` in place."""
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def numerical_vjp(outputs: Callable[[], tuple], cotangents: tuple, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central-difference vector-Jacobian product ``sum_i <c_i, d out_i / dx>``.

    Outputs are differenced elementwise before the projection, so round-off in
    outputs that ``x[j]`` does not touch cancels exactly instead of swamping
    small partials.
    """
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = outputs()
        flat[i] = orig - h
        minus = outputs()
        flat[i] = orig
        gflat[i] = sum(float(np.sum(c * (p - m))) for c, p, m in zip(cotangents, plus, minus)) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def grad_check(op_name: str, inputs: Mapping[str, object], seed: int, h: float = FD_STEP) -> float:
    """Max relative error between analytic and central-difference partials."""
    spec = _get(op_name)
    wrt = _active(spec, inputs)
    work = {k: (np.array(v, dtype=np.float64) if k in wrt else v) for k, v in inputs.items()}
    rng = np.random.default_rng(seed)
    outs = _as_tuple(spec.forward(**work))
    cots = tuple(rng.standard_normal(np.shape(o)) for o in outs)

    def outputs() -> tuple:
        return _as_tuple(spec.forward(**work))

    analytic = spec.backward(work, cots)
    worst = 0.0
    for name in wrt:
        numeric = numerical_vjp(outputs, cots, work[name], h)
        worst = max(worst, relative_error(analytic[name], numeric))
    return worst


# ---------------------------------------------------------------- registrations


def _softmax_bwd(inp, cots):
    probs, _ = ops.masked_softmax(inp["logits"], inp["visibility"])
    return {"logits": ops.masked_softmax_backward(probs, cots[0], cots[1])}


def _rms_bwd(inp, cots):
    dx, dg = ops.rms_norm_backward(cots[0], inp["x"], inp["gain"], inp.get("epsilon", 1e-6))
    return {"x": dx, "gain": dg}


def _geglu_bwd(inp, cots):
    dx, dg, dl, do = ops.geglu_backward(cots[0], inp["x"], inp["w_gate"], inp["w_lin"], inp["w_out"])
    return {"x": dx, "w_gate": dg, "w_lin": dl, "w_out": do}


def _gelu_bwd(inp, cots):
    return {"u": cots[0] * ops.gelu_grad(inp["u"])}


def _relbias_fwd(query_len, key_len, n_buckets, max_distance, bidirectional, bias_table):
    return ops.relative_position_bias(query_len, key_len, n_buckets, max_distance, bidirectional, bias_table)


def _relbias_bwd(inp, cots):
    buckets = ops.relative_buckets(
        inp["query_len"], inp["key_len"], inp["n_buckets"], inp["max_distance"], inp["bidirectional"]
    )
    return {"bias_table": ops.gather_bias_backward(cots[0], buckets, inp["n_buckets"])}


def _attn_fwd(x_q, x_kv, wq, wk, wv, wo, n_heads, visibility, bias=None):
    return attention(x_q, x_kv, wq, wk, wv, wo, n_heads, visibility, bias)[0]


def _attn_bwd(inp, cots):
    _, cache = attention(
        inp["x_q"], inp["x_kv"], inp["wq"], inp["wk"], inp["wv"], inp["wo"],
        inp["n_heads"], inp["visibility"], inp.get("bias"),
    )
    dxq, dxkv, dwq, dwk, dwv, dwo, dscores = attention_backward(
        cots[0], cache, inp["wq"], inp["wk"], inp["wv"], inp["wo"], inp["n_heads"]
    )
    out = {"x_q": dxq, "x_kv": dxkv, "wq": dwq, "wk": dwk, "wv": dwv, "wo": dwo}
    if inp.get("bias") is not None:
        out["bias"] = dscores.sum(axis=0, keepdims=True) if np.shape(inp["bias"])[0] == 1 else dscores
    return out


register_op("masked_softmax", ops.masked_softmax, _softmax_bwd, ["logits"])
register_op("rms_norm", ops.rms_norm, _rms_bwd, ["x", "gain"])
register_op("geglu", ops.geglu, _geglu_bwd, ["x", "w_gate", "w_lin", "w_out"])
register_op("gelu", ops.gelu, _gelu_bwd, ["u"])
register_op("relative_position_bias", _relbias_fwd, _relbias_bwd, ["bias_table"])
register_op("attention", _attn_fwd, _attn_bwd, ["x_q", "x_kv", "wq", "wk", "wv", "wo", "bias"])
