"""Adafactor with factored second moments, learning-rate schedules and loss assembly."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .model.params import ParamTree

DECAY_RATE = 0.8
EPS_SQUARED = 1e-30
EPS_SCALE = 1e-3
CLIP_THRESHOLD = 1.0


@dataclass(frozen=True)
class LrSchedule:
    """``inverse_sqrt``: 1/sqrt(max(n, warmup_floor)); ``fixed``: a constant."""

    kind: str = "inverse_sqrt"
    warmup_floor: int = 10_000
    value: float = 0.001

    def __post_init__(self):
        if self.kind not in ("inverse_sqrt", "fixed"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "fixed" and not self.value > 0:
            raise ValueError("fixed learning rate must be > 0")
        if self.kind == "inverse_sqrt" and self.warmup_floor < 1:
            raise ValueError("warmup_floor must be >= 1")

    @classmethod
    def inverse_sqrt(cls, warmup_floor: int = 10_000) -> "LrSchedule":
        return cls("inverse_sqrt", warmup_floor=warmup_floor)

    @classmethod
    def fixed(cls, value: float = 0.001) -> "LrSchedule":
        return cls("fixed", value=value)

    def to_dict(self) -> dict:
        if self.kind == "fixed":
            return {"kind": "fixed", "value": self.value}
        return {"kind": "inverse_sqrt", "warmup_floor": self.warmup_floor}

    @classmethod
    def from_dict(cls, data: Mapping) -> "LrSchedule":
        data = dict(data)
        kind = data.pop("kind", "inverse_sqrt")
        allowed = {"value"} if kind == "fixed" else {"warmup_floor"}
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"unknown schedule fields for {kind}: {sorted(unknown)}")
        return cls(kind, **data)


def lr_at(schedule: LrSchedule, n: int) -> float:
    if n < 0:
        raise ValueError("step must be >= 0")
    if schedule.kind == "fixed":
        return schedule.value
    return 1.0 / math.sqrt(max(n, schedule.warmup_floor))


@dataclass
class OptimizerState:
    """Step counter plus second-moment slots per parameter path.

    Matrices keep a row vector ``row`` and column vector ``col``; every other
    shape keeps a full ``v`` of the parameter's shape.
    """

    step: int = 0
    decay_rate: float = DECAY_RATE
    slots: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    @classmethod
    def init(cls, params: Mapping[str, np.ndarray], decay_rate: float = DECAY_RATE) -> "OptimizerState":
        slots = {}
        for path, p in params.items():
            if p.ndim == 2:
                slots[path] = {"row": np.zeros(p.shape[0], p.dtype), "col": np.zeros(p.shape[1], p.dtype)}
            else:
                slots[path] = {"v": np.zeros(p.shape, p.dtype)}
        return cls(0, decay_rate, slots)

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {f"{path}/{name}": arr for path, slot in self.slots.items() for name, arr in slot.items()}

    @classmethod
    def from_arrays(cls, step: int, decay_rate: float, arrays: Mapping[str, np.ndarray]) -> "OptimizerState":
        slots: dict[str, dict[str, np.ndarray]] = {}
        for key, arr in arrays.items():
            path, name = key.rsplit("/", 1)
            slots.setdefault(path, {})[name] = arr
        return cls(step, decay_rate, slots)

    def copy(self) -> "OptimizerState":
        return OptimizerState(
            self.step, self.decay_rate, {p: {k: v.copy() for k, v in s.items()} for p, s in self.slots.items()}
        )


def second_moment(state: OptimizerState, path: str) -> np.ndarray:
    """The second-moment estimate a parameter's next update divides by."""
    slot = state.slots[path]
    if "v" in slot:
        return slot["v"]
    return np.outer(slot["row"], slot["col"]) / slot["row"].mean()


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x)))) if x.size else 0.0


def adafactor_step(
    params: ParamTree,
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    schedule: LrSchedule,
) -> tuple[ParamTree, OptimizerState]:
    """One Adafactor update without momentum or weight decay.

    Returns new params and state; the inputs are left untouched.
    """
    if set(grads) != set(params):
        missing = sorted(set(params) ^ set(grads))
        raise ValueError(f"gradient paths do not match parameters: {missing[:5]}")
    new_state = state.copy()
    n = state.step + 1
    beta2 = 1.0 - n ** (-state.decay_rate)
    lr = lr_at(schedule, state.step)
    updated = {}
    for path, p in params.items():
        g = np.asarray(grads[path])
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} at {path}")
        if path not in new_state.slots:
            raise ValueError(f"optimizer state has no slot for {path}")
        slot = new_state.slots[path]
        g2 = np.square(g) + EPS_SQUARED
        if "v" in slot:
            slot["v"] = beta2 * slot["v"] + (1.0 - beta2) * g2
            v_hat = slot["v"]
        else:
            slot["row"] = beta2 * slot["row"] + (1.0 - beta2) * g2.mean(axis=1)
            slot["col"] = beta2 * slot["col"] + (1.0 - beta2) * g2.mean(axis=0)
            v_hat = np.outer(slot["row"], slot["col"]) / slot["row"].mean()
        u = g / np.sqrt(v_hat)
        u = u / max(1.0, _rms(u) / CLIP_THRESHOLD)
        scale = lr * max(EPS_SCALE, _rms(p))
        updated[path] = (p - scale * u).astype(p.dtype, copy=False)
    new_state.step = n
    return ParamTree(updated), new_state


def total_loss(cross_entropy: float, z_loss: float) -> float:
    if not (math.isfinite(cross_entropy) and math.isfinite(z_loss)):
        raise ValueError("non-finite loss component")
    return cross_entropy + z_loss
