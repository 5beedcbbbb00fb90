"""Training stages: token-budgeted loops with validation and metrics."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from ..data.batch import PackedBatch
from ..data.corpus import TokenCorpus
from ..data.objectives import ObjectiveKind, check_pair
from ..data.pipeline import BatchBuilder
from ..data.prompts import with_empty_encoder
from ..data.vocab import Vocab
from ..model.config import ArchitectureKind, ModelConfig
from ..model.loss import Z_LOSS_COEFFICIENT, loss_and_zloss
from ..model.transformer import forward, loss_and_grad
from ..optim import LrSchedule, OptimizerState, adafactor_step, lr_at, total_loss
from .checkpoint import Checkpoint, fresh_checkpoint

FINETUNE = "MTF"
VALIDATION_FRACTION = 0.05


@dataclass(frozen=True)
class TrainingStage:
    arch: ArchitectureKind
    objective: ObjectiveKind | str
    token_budget_seen: int
    schedule: LrSchedule = field(default_factory=LrSchedule.inverse_sqrt)
    dropout: float = 0.0
    seed: int = 0
    seq_len: int = 128
    batch_size: int = 8
    z_coefficient: float = Z_LOSS_COEFFICIENT
    validation_batches: int = 4

    def __post_init__(self):
        object.__setattr__(self, "arch", ArchitectureKind.parse(self.arch))
        if self.objective != FINETUNE:
            object.__setattr__(self, "objective", ObjectiveKind.parse(self.objective))
            if self.dropout != 0.0:
                raise ValueError("pretraining stages run without dropout")
        if self.token_budget_seen < 0:
            raise ValueError("token_budget_seen must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.seq_len < 2 or self.batch_size < 1:
            raise ValueError("seq_len must be >= 2 and batch_size >= 1")

    @property
    def objective_name(self) -> str:
        return self.objective if self.objective == FINETUNE else self.objective.name

    @property
    def label(self) -> str:
        return f"{self.arch.value}:{self.objective_name}"

    def to_dict(self) -> dict:
        return {
            "arch": self.arch.value,
            "objective": self.objective if self.objective == FINETUNE else self.objective.to_dict(),
            "token_budget_seen": self.token_budget_seen,
            "schedule": self.schedule.to_dict(),
            "dropout": self.dropout,
            "seed": self.seed,
            "seq_len": self.seq_len,
            "batch_size": self.batch_size,
            "z_coefficient": self.z_coefficient,
            "validation_batches": self.validation_batches,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrainingStage":
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown stage fields: {sorted(unknown)}")
        if "schedule" in data:
            data["schedule"] = LrSchedule.from_dict(data["schedule"])
        obj = data.get("objective")
        if isinstance(obj, Mapping):
            data["objective"] = ObjectiveKind.parse(dict(obj))
        return cls(**data)


@dataclass
class BudgetLedger:
    tokens_seen: int = 0
    tokens_trained: int = 0
    steps: int = 0

    def add(self, seen: int, trained: int) -> None:
        if trained > seen or trained < 0:
            raise ValueError("a batch cannot train more tokens than it shows")
        self.tokens_seen += seen
        self.tokens_trained += trained
        self.steps += 1


class TrainingAborted(RuntimeError):
    """Raised on a non-finite loss; carries the last good checkpoint."""

    def __init__(self, message: str, checkpoint: Checkpoint):
        super().__init__(message)
        self.checkpoint = checkpoint


class MetricsWriter:
    """Appends one JSON record per line."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def __call__(self, record: Mapping) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _as_sink(sink) -> Callable[[Mapping], None]:
    if sink is None:
        return lambda record: None
    if isinstance(sink, (str, Path)):
        return MetricsWriter(sink)
    return sink


def route(ckpt: Checkpoint, batch: PackedBatch) -> PackedBatch:
    """Attach the empty encoder stream for converted encoder-decoder trees."""
    return with_empty_encoder(batch) if ckpt.empty_encoder else batch


def validation_loss(ckpt: Checkpoint, batches: Iterable[PackedBatch]) -> float:
    """Token-weighted cross-entropy over ``batches`` in infer mode."""
    total, count = 0.0, 0
    for batch in batches:
        batch = route(ckpt, batch)
        logits = forward(ckpt.params, ckpt.config, ckpt.model_arch, batch, mode="infer")
        res = loss_and_zloss(logits, batch.target_ids, batch.loss_mask, 0.0)
        total += res.cross_entropy * res.tokens_trained
        count += res.tokens_trained
    return total / count if count else float("nan")


def train_loop(
    start: Checkpoint,
    stage: TrainingStage,
    next_batch: Callable[[np.random.Generator], PackedBatch],
    validation: list[PackedBatch],
    metrics_sink=None,
    extra_summary: Mapping | None = None,
    marks: Iterable[int] = (),
    on_mark: Callable[[int, Checkpoint], None] | None = None,
) -> Checkpoint:
    """Step until the stage's seen-token budget is met.

    The optimizer state starts fresh; the returned checkpoint carries it.
    ``on_mark(mark, snapshot)`` fires once for each stage-local token count in
    ``marks`` as soon as the seen tokens reach it.
    """
    sink = _as_sink(metrics_sink)
    config = replace(start.config, dropout_rate=stage.dropout)
    params = start.params
    state = OptimizerState.init(params)
    ledger = BudgetLedger()
    rng = np.random.default_rng([stage.seed, 1])
    stride = max(1, math.ceil(VALIDATION_FRACTION * stage.token_budget_seen))
    curve: list[list[float]] = []

    def validate():
        loss = validation_loss(replace(start, params=params), validation) if validation else None
        if loss is not None:
            curve.append([ledger.tokens_seen, loss])
        sink({"kind": "validation", "step": ledger.steps, "tokens_seen": ledger.tokens_seen,
              "cumulative_tokens_seen": start.tokens_seen + ledger.tokens_seen, "val_loss": loss})

    pending = sorted(set(int(m) for m in marks))

    def fire_marks():
        while pending and pending[0] <= ledger.tokens_seen:
            m = pending.pop(0)
            if on_mark is not None:
                on_mark(m, _finish(start, stage, params, state, ledger, curve, extra_summary))

    validate()
    fire_marks()
    next_mark = stride
    while ledger.tokens_seen < stage.token_budget_seen:
        batch = route(start, next_batch(rng))
        result, grads = loss_and_grad(
            params, config, start.model_arch, batch, z_coefficient=stage.z_coefficient,
            mode="train", dropout_seed=[stage.seed, 2, ledger.steps],
        )
        if not (math.isfinite(result.cross_entropy) and math.isfinite(result.z_loss)):
            diag = start.with_meta(aborted=f"non-finite loss at step {ledger.steps}")
            raise TrainingAborted(
                f"{stage.label}: non-finite loss at step {ledger.steps}",
                replace(diag, params=params, optimizer_state=state),
            )
        lr = lr_at(stage.schedule, state.step)
        params, state = adafactor_step(params, grads, state, stage.schedule)
        ledger.add(batch.tokens_seen(), batch.tokens_trained())
        sink({
            "kind": "train", "step": ledger.steps, "lr": lr,
            "cross_entropy": result.cross_entropy, "z_loss": result.z_loss,
            "total_loss": total_loss(result.cross_entropy, result.z_loss),
            "tokens_seen": ledger.tokens_seen, "tokens_trained": ledger.tokens_trained,
        })
        if ledger.tokens_seen >= next_mark or ledger.tokens_seen >= stage.token_budget_seen:
            validate()
            while next_mark <= ledger.tokens_seen:
                next_mark += stride
        fire_marks()
    return _finish(start, stage, params, state, ledger, curve, extra_summary)


def _finish(start, stage, params, state, ledger, curve, extra_summary) -> Checkpoint:
    summary = {
        **stage.to_dict(),
        **(extra_summary or {}),
        "tokens_seen": ledger.tokens_seen,
        "tokens_trained": ledger.tokens_trained,
        "steps": ledger.steps,
        "final_val_loss": curve[-1][1] if curve else None,
        "validation_curve": [list(p) for p in curve],
    }
    return replace(
        start.with_meta(
            objective=stage.objective_name,
            cumulative_tokens_seen=start.tokens_seen + ledger.tokens_seen,
            cumulative_tokens_trained=start.tokens_trained + ledger.tokens_trained,
            stage_history=start.stage_history + [summary],
        ),
        params=params,
        optimizer_state=state,
    )


def run_stage(
    start: Checkpoint | ModelConfig,
    stage: TrainingStage,
    corpus: TokenCorpus,
    metrics_sink=None,
    vocab: Vocab | None = None,
    marks: Iterable[int] = (),
    on_mark: Callable[[int, Checkpoint], None] | None = None,
) -> Checkpoint:
    """Pretrain or adapt ``start`` under ``stage``; a ModelConfig starts fresh."""
    if stage.objective == FINETUNE:
        raise ValueError("use multitask_finetune for finetuning stages")
    vocab = vocab or Vocab(start.vocab_size if isinstance(start, ModelConfig) else start.config.vocab_size)
    if isinstance(start, ModelConfig):
        start = fresh_checkpoint(start, stage.arch, stage.seed)
    if start.arch is not stage.arch:
        raise ValueError(
            f"incompatible start: checkpoint is {start.arch.value}, stage is {stage.arch.value}; convert first"
        )
    check_pair(stage.arch.value, stage.objective.name)
    if corpus.train.size == 0:
        raise ValueError("empty training corpus")
    builder = BatchBuilder(corpus.train, stage.objective, stage.arch, stage.seq_len, stage.batch_size, vocab)
    held = BatchBuilder(corpus.heldout, stage.objective, stage.arch, stage.seq_len, stage.batch_size, vocab)
    validation = held.fixed_batches(stage.validation_batches) if stage.validation_batches else []
    return train_loop(start, stage, builder.sample, validation, metrics_sink, marks=marks, on_mark=on_mark)


def tokens_per_batch(stage: TrainingStage, vocab: Vocab | None = None) -> int:
    """Seen tokens in one batch of ``stage`` (constant for every pretraining objective)."""
    vocab = vocab or Vocab()
    stream = np.arange(4 * stage.seq_len) % 8 + 2
    b = BatchBuilder(stream, stage.objective, stage.arch, stage.seq_len, stage.batch_size, vocab)
    return b.sample(np.random.default_rng(0)).tokens_seen()
