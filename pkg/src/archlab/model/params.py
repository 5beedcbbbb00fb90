from __future__ import annotations

from collections.abc import Mapping
from typing import Callable, Iterator

import numpy as np

from .config import ED, ArchitectureKind, ModelConfig

_ATTN = ("q", "k", "v", "o")
_MLP = ("wi_gate", "wi_lin", "wo")


class ParamTree(Mapping):
    """Immutable mapping from parameter path to array, iterated in sorted order."""

    def __init__(self, items=()):
        data = dict(items)
        self._data = {k: data[k] for k in sorted(data)}

    def __getitem__(self, key: str) -> np.ndarray:
        return self._data[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def __repr__(self) -> str:
        return f"ParamTree({len(self)} tensors, {self.total_count()} values)"

    def total_count(self) -> int:
        return int(sum(v.size for v in self._data.values()))

    def replace(self, updates: Mapping[str, np.ndarray]) -> "ParamTree":
        unknown = set(updates) - set(self._data)
        if unknown:
            raise KeyError(f"unknown parameter paths: {sorted(unknown)}")
        return ParamTree({**self._data, **updates})

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "ParamTree":
        return ParamTree({k: fn(v) for k, v in self._data.items()})

    def bitwise_equal(self, other: Mapping[str, np.ndarray]) -> bool:
        if list(self) != sorted(other):
            return False
        return all(
            self[k].dtype == other[k].dtype
            and self[k].shape == other[k].shape
            and self[k].tobytes() == other[k].tobytes()
            for k in self
        )


def _layer_shapes(prefix: str, cfg: ModelConfig, cross: bool) -> dict[str, tuple[int, ...]]:
    d, f = cfg.d_model, cfg.d_ff
    shapes = {f"{prefix}/self_attn/{n}": (d, d) for n in _ATTN}
    shapes[f"{prefix}/self_attn_norm"] = (d,)
    if cross:
        shapes.update({f"{prefix}/cross_attn/{n}": (d, d) for n in _ATTN})
        shapes[f"{prefix}/cross_attn_norm"] = (d,)
    shapes[f"{prefix}/mlp/wi_gate"] = (d, f)
    shapes[f"{prefix}/mlp/wi_lin"] = (d, f)
    shapes[f"{prefix}/mlp/wo"] = (f, d)
    shapes[f"{prefix}/mlp_norm"] = (d,)
    return shapes


def layer_name(stack: str, i: int) -> str:
    return f"{stack}/layer_{i:03d}"


def param_shapes(config: ModelConfig, arch: ArchitectureKind | str) -> dict[str, tuple[int, ...]]:
    """Parameter layout. CD and ND share it exactly; ED adds an encoder and cross-attention."""
    arch = ArchitectureKind.parse(arch)
    d = config.d_model
    shapes: dict[str, tuple[int, ...]] = {"shared/embedding": (config.vocab_size, d)}
    if not config.tied_embeddings:
        shapes["shared/lm_head"] = (d, config.vocab_size)
    is_ed = arch is ED
    if is_ed:
        n_enc = config.encoder_layers or config.decoder_layers
        for i in range(n_enc):
            shapes.update(_layer_shapes(layer_name("encoder", i), config, cross=False))
        shapes["encoder/final_norm"] = (d,)
        shapes["encoder/rel_bias"] = (config.rel_buckets, config.n_heads)
    for i in range(config.decoder_layers):
        shapes.update(_layer_shapes(layer_name("decoder", i), config, cross=is_ed))
    shapes["decoder/final_norm"] = (d,)
    shapes["decoder/rel_bias"] = (config.rel_buckets, config.n_heads)
    return dict(sorted(shapes.items()))


def count_params(config: ModelConfig, arch: ArchitectureKind | str) -> int:
    return int(sum(int(np.prod(s)) for s in param_shapes(config, arch).values()))


def init_params(config: ModelConfig, arch: ArchitectureKind | str, seed: int) -> ParamTree:
    """Seeded initialisation: N(0, 1) embeddings, N(0, d_model^-0.5) projections,
    unit gains and a zero relative-bias table."""
    rng = np.random.default_rng(seed)
    dtype = config.dtype
    proj_std = config.d_model**-0.5
    out = {}
    for path, shape in param_shapes(config, arch).items():
        leaf = path.rsplit("/", 1)[-1]
        if leaf.endswith("norm"):
            value = np.ones(shape)
        elif leaf == "rel_bias":
            value = np.zeros(shape)
        elif leaf == "embedding":
            value = rng.standard_normal(shape)
        else:
            value = rng.standard_normal(shape) * proj_std
        out[path] = value.astype(dtype)
    return ParamTree(out)
