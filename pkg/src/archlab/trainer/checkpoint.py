"""Checkpoints and their single-file binary format.

Layout: the magic ``ARCHLAB\\0``, a little-endian u64 header length, a UTF-8
JSON header, then for every tensor listed in the header a u64 byte count and
the raw little-endian bytes. Parameters come first in sorted path order,
followed by optimizer slots in sorted order.
"""
from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..model.config import ED, ArchitectureKind, ModelConfig
from ..model.params import ParamTree
from ..optim import OptimizerState

FORMAT_VERSION = 1
MAGIC = b"ARCHLAB\0"
_U64 = struct.Struct("<Q")

# Encoder routing for decoder-only stages that run on an encoder-decoder tree.
ENCODER_NORMAL = "normal"
ENCODER_EMPTY = "empty"


@dataclass
class Checkpoint:
    params: ParamTree
    config: ModelConfig
    arch: ArchitectureKind
    optimizer_state: OptimizerState | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.arch = ArchitectureKind.parse(self.arch)
        self.meta = {
            "objective": None,
            "cumulative_tokens_seen": 0,
            "cumulative_tokens_trained": 0,
            "stage_history": [],
            "encoder_input": ENCODER_NORMAL,
            "format_version": FORMAT_VERSION,
            **self.meta,
        }

    @property
    def objective(self) -> str | None:
        return self.meta["objective"]

    @property
    def stage_history(self) -> list[dict]:
        return self.meta["stage_history"]

    @property
    def tokens_seen(self) -> int:
        return self.meta["cumulative_tokens_seen"]

    @property
    def tokens_trained(self) -> int:
        return self.meta["cumulative_tokens_trained"]

    @property
    def model_arch(self) -> ArchitectureKind:
        """Architecture the parameter tree is run as."""
        return ED if self.meta["encoder_input"] == ENCODER_EMPTY else self.arch

    @property
    def empty_encoder(self) -> bool:
        return self.meta["encoder_input"] == ENCODER_EMPTY

    def with_meta(self, **updates) -> "Checkpoint":
        meta = copy.deepcopy(self.meta)
        meta.update(updates)
        return replace(self, meta=meta)

    def lineage(self) -> str:
        def name(obj):
            return obj["name"] if isinstance(obj, dict) else obj

        return " -> ".join(f"{s['arch']}:{name(s['objective'])}" for s in self.stage_history)

    def bitwise_equal(self, other: "Checkpoint") -> bool:
        if not self.params.bitwise_equal(other.params):
            return False
        if self.arch is not other.arch or self.config != other.config:
            return False
        if _canonical(self.meta) != _canonical(other.meta):
            return False
        if (self.optimizer_state is None) != (other.optimizer_state is None):
            return False
        if self.optimizer_state is None:
            return True
        a, b = self.optimizer_state, other.optimizer_state
        return (a.step, a.decay_rate) == (b.step, b.decay_rate) and ParamTree(a.to_arrays()).bitwise_equal(
            b.to_arrays()
        )


def fresh_checkpoint(config: ModelConfig, arch, seed: int) -> Checkpoint:
    from ..model.params import init_params

    arch = ArchitectureKind.parse(arch)
    config = config.for_arch(arch)
    return Checkpoint(init_params(config, arch, seed), config, arch, meta={"init_seed": seed})


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _tensor_entries(prefix: str, arrays) -> list[tuple[str, np.ndarray]]:
    return [(f"{prefix}{k}", np.asarray(arrays[k])) for k in sorted(arrays)]


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    entries = _tensor_entries("params/", ckpt.params)
    opt = None
    if ckpt.optimizer_state is not None:
        st = ckpt.optimizer_state
        opt = {"step": st.step, "decay_rate": st.decay_rate}
        entries += _tensor_entries("optimizer/", st.to_arrays())
    header = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config.to_dict(),
        "arch": ckpt.arch.value,
        "meta": ckpt.meta,
        "optimizer": opt,
        "tensors": [
            {"name": name, "dtype": arr.dtype.newbyteorder("<").str, "shape": list(arr.shape)}
            for name, arr in entries
        ],
    }
    blob = _canonical(header).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_U64.pack(len(blob)))
        fh.write(blob)
        for _, arr in entries:
            raw = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
            fh.write(_U64.pack(len(raw)))
            fh.write(raw)
    tmp.replace(path)
    return path


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError("truncated checkpoint file")
    return data


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (n,) = _U64.unpack(_read_exact(fh, _U64.size))
        header = json.loads(_read_exact(fh, n).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format_version {header.get('format_version')}")
        params, slots = {}, {}
        for spec in header["tensors"]:
            (nbytes,) = _U64.unpack(_read_exact(fh, _U64.size))
            dtype = np.dtype(spec["dtype"])
            arr = np.frombuffer(_read_exact(fh, nbytes), dtype=dtype).reshape(spec["shape"])
            arr = arr.astype(dtype.newbyteorder("="))
            group, name = spec["name"].split("/", 1)
            (params if group == "params" else slots)[name] = arr
        if fh.read(1):
            raise ValueError("trailing bytes after last tensor")
    opt = header["optimizer"]
    state = OptimizerState.from_arrays(opt["step"], opt["decay_rate"], slots) if opt is not None else None
    return Checkpoint(
        ParamTree(params), ModelConfig.from_dict(header["config"]), header["arch"], state, header["meta"]
    )


def read_header(path: str | Path) -> dict:
    """The JSON header alone, without reading tensor data."""
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (n,) = _U64.unpack(_read_exact(fh, _U64.size))
        return json.loads(_read_exact(fh, n).decode("utf-8"))
