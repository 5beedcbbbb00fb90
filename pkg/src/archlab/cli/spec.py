"""Experiment and matrix spec files (YAML, versioned, unknown fields rejected)."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from ..data.corpus import TokenCorpus, read_corpus, synthetic_pattern_corpus
from ..data.objectives import ALLOWED_PAIRS, ObjectiveKind
from ..eval.tasks import TOY_TRAIN_TASKS, EvalTask, load_tasks, toy_task_suite
from ..model.config import CD, ED, ND, ArchitectureKind, ModelConfig
from ..optim import LrSchedule
from ..trainer.convert import EMPTY_ENCODER, MASK_SWITCH
from ..trainer.stage import FINETUNE, TrainingStage

SPEC_FORMAT_VERSION = 1
DEFAULT_MARKS = (0.25, 0.5, 1.0)


class SpecError(ValueError):
    """A spec failed validation; the message names the offending field."""


def _fields(where: str, data: Any, required: set[str], optional: set[str]) -> dict:
    if not isinstance(data, Mapping):
        raise SpecError(f"{where}: expected a mapping, got {type(data).__name__}")
    data = dict(data)
    unknown = set(data) - required - optional
    if unknown:
        raise SpecError(f"{where}: unknown field(s) {sorted(unknown)}")
    missing = required - set(data)
    if missing:
        raise SpecError(f"{where}: missing field(s) {sorted(missing)}")
    return data


def _int(where: str, value, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise SpecError(f"{where}: expected an integer >= {minimum}, got {value!r}")
    return value


@dataclass(frozen=True)
class CorpusSpec:
    synthetic_docs: int | None = 4000
    synthetic_seed: int = 0
    path: str | None = None

    @classmethod
    def parse(cls, data, base: Path) -> "CorpusSpec":
        d = _fields("corpus", data, set(), {"synthetic", "path"})
        if ("synthetic" in d) == ("path" in d):
            raise SpecError("corpus: give exactly one of 'synthetic' or 'path'")
        if "path" in d:
            p = Path(d["path"])
            return cls(None, 0, str(p if p.is_absolute() else (base / p)))
        s = _fields("corpus.synthetic", d["synthetic"], {"n_docs"}, {"seed"})
        return cls(_int("corpus.synthetic.n_docs", s["n_docs"], 1), _int("corpus.synthetic.seed", s.get("seed", 0)))

    def load(self) -> TokenCorpus:
        if self.path is not None:
            return TokenCorpus.from_documents(read_corpus(self.path))
        return TokenCorpus.from_documents(synthetic_pattern_corpus(self.synthetic_docs, self.synthetic_seed))

    def to_dict(self) -> dict:
        if self.path is not None:
            return {"path": self.path}
        return {"synthetic": {"n_docs": self.synthetic_docs, "seed": self.synthetic_seed}}


@dataclass(frozen=True)
class TaskSource:
    """Either the built-in toy suite or task files."""

    toy: tuple[str, ...] = ()
    files: tuple[str, ...] = ()
    n_examples: int = 64
    seed: int = 0

    @classmethod
    def parse(cls, where: str, data, base: Path, default_toy: tuple[str, ...]) -> "TaskSource":
        if data == "toy":
            return cls(default_toy)
        d = _fields(where, data, set(), {"toy", "files", "n_examples", "seed"})
        toy = d.get("toy", [])
        toy = list(default_toy) if toy is True else list(toy or [])
        files = [str(Path(f) if Path(f).is_absolute() else base / f) for f in d.get("files", [])]
        if not toy and not files:
            raise SpecError(f"{where}: no tasks")
        known = set(toy_task_suite(1))
        bad = [t for t in toy if t not in known]
        if bad:
            raise SpecError(f"{where}.toy: unknown toy tasks {bad}; known {sorted(known)}")
        return cls(tuple(toy), tuple(files), _int(f"{where}.n_examples", d.get("n_examples", 64), 1),
                   _int(f"{where}.seed", d.get("seed", 0)))

    def load(self) -> list[EvalTask]:
        tasks = []
        if self.toy:
            suite = toy_task_suite(self.n_examples, self.seed)
            tasks += [suite[n] for n in self.toy]
        for f in self.files:
            tasks += load_tasks(f)
        return tasks

    def to_dict(self) -> dict:
        return {"toy": list(self.toy), "files": list(self.files), "n_examples": self.n_examples, "seed": self.seed}


@dataclass(frozen=True)
class StageSpec:
    stage: TrainingStage
    convert: str | None = None
    tasks: TaskSource | None = None

    @property
    def is_finetune(self) -> bool:
        return self.stage.objective == FINETUNE

    def to_dict(self) -> dict:
        d = self.stage.to_dict()
        d["convert"] = self.convert
        d["tasks"] = self.tasks.to_dict() if self.tasks else None
        return d


_STAGE_FIELDS = {"schedule", "dropout", "seed", "seq_len", "batch_size", "z_coefficient",
                 "validation_batches", "convert", "tasks", "mask_rate", "mean_span"}


def _parse_stage(i: int, data, base: Path) -> StageSpec:
    where = f"stages[{i}]"
    d = _fields(where, data, {"arch", "objective", "budget"}, _STAGE_FIELDS)
    try:
        arch = ArchitectureKind.parse(d["arch"])
    except ValueError as exc:
        raise SpecError(f"{where}.arch: {exc}") from None
    objective = str(d["objective"])
    finetune = objective == FINETUNE
    if not finetune:
        if objective not in ALLOWED_PAIRS[arch.value]:
            raise SpecError(f"{where}: {arch.value}:{objective} is not a valid architecture/objective pair")
        obj = ObjectiveKind(objective, d.get("mask_rate", 0.15), d.get("mean_span", 3.0))
    elif "mask_rate" in d or "mean_span" in d:
        raise SpecError(f"{where}: mask_rate/mean_span only apply to MLM stages")
    if "tasks" in d and not finetune:
        raise SpecError(f"{where}.tasks: only finetuning stages take tasks")
    convert = d.get("convert")
    if convert not in (None, MASK_SWITCH, EMPTY_ENCODER):
        raise SpecError(f"{where}.convert: expected {MASK_SWITCH} or {EMPTY_ENCODER}, got {convert!r}")
    kw = {}
    try:
        if "schedule" in d:
            kw["schedule"] = LrSchedule.from_dict(d["schedule"])
        elif finetune:
            kw["schedule"] = LrSchedule.fixed(0.001)
        for k in ("dropout", "z_coefficient"):
            if k in d:
                kw[k] = float(d[k])
        if finetune and "dropout" not in d:
            kw["dropout"] = 0.1
        for k in ("seed", "seq_len", "batch_size", "validation_batches"):
            if k in d:
                kw[k] = _int(f"{where}.{k}", d[k])
        stage = TrainingStage(arch, FINETUNE if finetune else obj, _int(f"{where}.budget", d["budget"]), **kw)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, SpecError):
            raise
        raise SpecError(f"{where}: {exc}") from None
    tasks = TaskSource.parse(f"{where}.tasks", d.get("tasks", "toy"), base, TOY_TRAIN_TASKS) if finetune else None
    return StageSpec(stage, convert, tasks)


def check_transition(where: str, prev: ArchitectureKind, spec: StageSpec) -> None:
    new = spec.stage.arch
    if new is prev:
        if spec.convert is not None:
            raise SpecError(f"{where}.convert: no architecture change to convert")
        return
    mode = spec.convert or MASK_SWITCH
    if mode == MASK_SWITCH and {prev, new} <= {CD, ND}:
        return
    if mode == EMPTY_ENCODER and prev is ED and new is CD:
        return
    raise SpecError(f"{where}: no parameter mapping from {prev.value} to {new.value} via {mode}")


@dataclass(frozen=True)
class EvalSpec:
    tasks: TaskSource
    marks: tuple[float, ...] = DEFAULT_MARKS
    policy: str = "median_then_mean"
    scoring: str = "sum_logprob"
    after_finetune: bool = True

    @classmethod
    def parse(cls, data, base: Path) -> "EvalSpec":
        d = _fields("eval", data, set(), {"tasks", "marks", "policy", "scoring", "after_finetune"})
        all_toy = tuple(sorted(toy_task_suite(1)))
        tasks = TaskSource.parse("eval.tasks", d.get("tasks", "toy"), base, all_toy)
        marks = tuple(float(m) for m in d.get("marks", DEFAULT_MARKS))
        if any(not 0.0 < m <= 1.0 for m in marks):
            raise SpecError("eval.marks: fractions must lie in (0, 1]")
        policy = d.get("policy", "median_then_mean")
        if policy not in ("median_then_mean", "single_prompt_mean"):
            raise SpecError(f"eval.policy: unknown policy {policy!r}")
        scoring = d.get("scoring", "sum_logprob")
        if scoring not in ("sum_logprob", "mean_logprob"):
            raise SpecError(f"eval.scoring: unknown scoring {scoring!r}")
        return cls(tasks, tuple(sorted(set(marks))), policy, scoring, bool(d.get("after_finetune", True)))

    def to_dict(self) -> dict:
        return {"tasks": self.tasks.to_dict(), "marks": list(self.marks), "policy": self.policy,
                "scoring": self.scoring, "after_finetune": self.after_finetune}


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    model: ModelConfig
    corpus: CorpusSpec
    stages: tuple[StageSpec, ...]
    eval: EvalSpec | None = None
    output: str | None = None

    def to_dict(self) -> dict:
        return {
            "format_version": SPEC_FORMAT_VERSION,
            "name": self.name,
            "model": self.model.to_dict(),
            "corpus": self.corpus.to_dict(),
            "stages": [s.to_dict() for s in self.stages],
            "eval": self.eval.to_dict() if self.eval else None,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    @property
    def pretraining_budget(self) -> int:
        return sum(s.stage.token_budget_seen for s in self.stages if not s.is_finetune)

    def with_overrides(self, seed: int | None = None, precision: str | None = None) -> "ExperimentSpec":
        spec = self
        if seed is not None:
            stages = tuple(replace(s, stage=replace(s.stage, seed=seed)) for s in spec.stages)
            spec = replace(spec, stages=stages)
        if precision is not None:
            spec = replace(spec, model=replace(spec.model, precision=precision))
        return spec


def _check_version(where: str, d: dict) -> None:
    version = d.pop("format_version", None)
    if version != SPEC_FORMAT_VERSION:
        raise SpecError(f"{where}format_version: expected {SPEC_FORMAT_VERSION}, got {version!r}")


def _parse_model(data) -> ModelConfig:
    try:
        return ModelConfig.from_dict(dict(data or {}))
    except (TypeError, ValueError) as exc:
        raise SpecError(f"model: {exc}") from None


def parse_experiment(data, base: Path = Path(".")) -> ExperimentSpec:
    d = _fields("spec", data, {"format_version", "name", "stages"}, {"model", "corpus", "eval", "output"})
    _check_version("", d)
    name = d["name"]
    if not isinstance(name, str) or not name or "/" in name:
        raise SpecError(f"name: expected a non-empty string without '/', got {name!r}")
    if not isinstance(d["stages"], list) or not d["stages"]:
        raise SpecError("stages: at least one stage is required")
    stages = tuple(_parse_stage(i, s, base) for i, s in enumerate(d["stages"]))
    if stages[0].is_finetune:
        raise SpecError("stages[0]: the first stage must pretrain")
    if stages[0].convert is not None:
        raise SpecError("stages[0].convert: nothing to convert from")
    for i in range(1, len(stages)):
        check_transition(f"stages[{i}]", stages[i - 1].stage.arch, stages[i])
    model = _parse_model(d.get("model"))
    corpus = CorpusSpec.parse(d.get("corpus", {"synthetic": {"n_docs": 4000}}), base)
    ev = EvalSpec.parse(d["eval"], base) if d.get("eval") is not None else None
    return ExperimentSpec(name, model, corpus, stages, ev, d.get("output"))


def load_yaml(path: str | Path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return yaml.safe_load(fh)
    except OSError as exc:
        raise SpecError(f"cannot read spec file {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise SpecError(f"{path}: invalid YAML: {exc}") from None


def load_experiment(path: str | Path) -> ExperimentSpec:
    return parse_experiment(load_yaml(path), Path(path).parent)


# ------------------------------------------------------------------ matrix

ALL_PAIRS = tuple(f"{a}:{o}" for a, objs in ALLOWED_PAIRS.items() for o in objs)


def parse_matrix(data, base: Path = Path(".")) -> list[ExperimentSpec]:
    """One single-stage experiment per architecture/objective pair."""
    d = _fields("matrix", data, {"format_version", "name", "budget"},
                {"pairs", "model", "corpus", "eval", "stage"})
    _check_version("", d)
    pairs = d.get("pairs", "all")
    pairs = list(ALL_PAIRS) if pairs == "all" else list(pairs)
    if not pairs:
        raise SpecError("pairs: at least one pair is required")
    if len(set(pairs)) != len(pairs):
        raise SpecError("pairs: duplicate pairs")
    common = dict(d.get("stage") or {})
    for k in ("arch", "objective", "budget", "convert", "tasks"):
        if k in common:
            raise SpecError(f"stage.{k}: set per pair, not in the shared stage block")
    specs = []
    for pair in pairs:
        if pair not in ALL_PAIRS:
            raise SpecError(f"pairs: {pair!r} is not a valid architecture/objective pair")
        arch, obj = pair.split(":")
        raw = {
            "format_version": SPEC_FORMAT_VERSION,
            "name": f"{d['name']}-{arch}-{obj}",
            "stages": [{"arch": arch, "objective": obj, "budget": d["budget"], **common}],
        }
        for k in ("model", "corpus", "eval"):
            if k in d:
                raw[k] = d[k]
        specs.append(parse_experiment(raw, base))
    return specs


def load_matrix(path: str | Path) -> list[ExperimentSpec]:
    return parse_matrix(load_yaml(path), Path(path).parent)
