from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

PAD_SEGMENT = -1


def _ints(x) -> np.ndarray:
    return np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=np.int64)))


@dataclass(frozen=True, eq=False)
class PackedBatch:
    """Token rows plus the metadata the model needs to build visibility.

    Row layout is next-token: ``target_ids[b, t]`` is what position ``t``
    predicts, and the loss counts position ``t`` only where ``loss_mask`` is
    set. For encoder-decoder batches the ``input_ids``/``target_ids``/
    ``loss_mask``/``segment_ids`` fields describe the decoder stream and the
    encoder stream lives in ``encoder_ids``/``encoder_segments``.
    Padding positions carry segment id ``-1``.
    """

    input_ids: np.ndarray
    target_ids: np.ndarray
    loss_mask: np.ndarray
    segment_ids: np.ndarray
    objective: str
    prefix_lens: np.ndarray | None = None
    encoder_ids: np.ndarray | None = None
    encoder_segments: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "input_ids", _ints(self.input_ids))
        object.__setattr__(self, "target_ids", _ints(self.target_ids))
        object.__setattr__(self, "segment_ids", _ints(self.segment_ids))
        object.__setattr__(self, "loss_mask", np.atleast_2d(np.asarray(self.loss_mask, dtype=bool)))
        shape = self.input_ids.shape
        for name in ("target_ids", "loss_mask", "segment_ids"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} shape {getattr(self, name).shape} != input_ids shape {shape}")
        if self.prefix_lens is not None:
            p = _ints(self.prefix_lens)
            if p.shape[0] != shape[0]:
                raise ValueError("prefix_lens needs one row per batch row")
            object.__setattr__(self, "prefix_lens", p)
        if (self.encoder_ids is None) != (self.encoder_segments is None):
            raise ValueError("encoder_ids and encoder_segments go together")
        if self.encoder_ids is not None:
            e = _ints(self.encoder_ids)
            s = _ints(self.encoder_segments)
            if e.shape != s.shape or e.shape[0] != shape[0]:
                raise ValueError("encoder stream shape mismatch")
            object.__setattr__(self, "encoder_ids", e)
            object.__setattr__(self, "encoder_segments", s)
        if np.any(self.loss_mask & (self.segment_ids == PAD_SEGMENT)):
            raise ValueError("loss_mask set on a padding position")

    @property
    def is_encoder_decoder(self) -> bool:
        return self.encoder_ids is not None

    @property
    def shape(self) -> tuple[int, int]:
        return self.input_ids.shape

    def with_prefix_lens(self, prefix_lens) -> "PackedBatch":
        return replace(self, prefix_lens=prefix_lens)

    def with_encoder(self, encoder_ids, encoder_segments) -> "PackedBatch":
        return replace(self, encoder_ids=encoder_ids, encoder_segments=encoder_segments)

    def tokens_seen(self) -> int:
        n = int(np.sum(self.segment_ids != PAD_SEGMENT))
        if self.encoder_segments is not None:
            n += int(np.sum(self.encoder_segments != PAD_SEGMENT))
        return n

    def tokens_trained(self) -> int:
        return int(self.loss_mask.sum())

    def to_records(self) -> list[dict]:
        records = []
        for b in range(self.shape[0]):
            rec = {
                "input_ids": self.input_ids[b].tolist(),
                "target_ids": self.target_ids[b].tolist(),
                "loss_mask": self.loss_mask[b].astype(int).tolist(),
                "segment_ids": self.segment_ids[b].tolist(),
                "prefix_lens": None if self.prefix_lens is None else self.prefix_lens[b].tolist(),
                "objective": self.objective,
            }
            if self.encoder_ids is not None:
                rec["encoder_ids"] = self.encoder_ids[b].tolist()
                rec["encoder_segments"] = self.encoder_segments[b].tolist()
            records.append(rec)
        return records

    @classmethod
    def from_records(cls, records: Iterable[dict]) -> "PackedBatch":
        records = list(records)
        if not records:
            raise ValueError("no records")
        objective = records[0]["objective"]
        has_prefix = records[0]["prefix_lens"] is not None
        has_enc = "encoder_ids" in records[0]
        return cls(
            input_ids=[r["input_ids"] for r in records],
            target_ids=[r["target_ids"] for r in records],
            loss_mask=[r["loss_mask"] for r in records],
            segment_ids=[r["segment_ids"] for r in records],
            objective=objective,
            prefix_lens=[r["prefix_lens"] for r in records] if has_prefix else None,
            encoder_ids=[r["encoder_ids"] for r in records] if has_enc else None,
            encoder_segments=[r["encoder_segments"] for r in records] if has_enc else None,
        )


def token_accounting(batch: PackedBatch) -> dict:
    """Seen vs trained positions; seen counts every non-pad position of every stream."""
    seen = batch.tokens_seen()
    trained = batch.tokens_trained()
    return {"tokens_seen": seen, "tokens_trained": trained, "fraction": trained / seen if seen else 0.0}


def dump_batch(batch: PackedBatch, path: str | Path) -> None:
    """Append the batch rows to a JSON-lines debug file."""
    with open(path, "a", encoding="utf-8") as fh:
        for rec in batch.to_records():
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


def load_batch(path: str | Path) -> PackedBatch:
    with open(path, encoding="utf-8") as fh:
        return PackedBatch.from_records(json.loads(line) for line in fh if line.strip())
