"""Aggregating per-prompt accuracies into reports."""
from __future__ import annotations

import enum
import json
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..trainer.checkpoint import Checkpoint
from .scoring import ScoringPolicy, rank_classify
from .tasks import EvalTask


class AggregatePolicy(str, enum.Enum):
    MEDIAN_THEN_MEAN = "median_then_mean"
    SINGLE_PROMPT_MEAN = "single_prompt_mean"


def _check_matrix(matrix: Mapping[str, Sequence[float]]) -> None:
    if not matrix:
        raise ValueError("no tasks to aggregate")
    for task, accs in matrix.items():
        if len(accs) == 0:
            raise ValueError(f"task {task!r} has no prompt accuracies")


def aggregate_value(matrix: Mapping[str, Sequence[float]], policy: AggregatePolicy | str) -> float:
    """``median_then_mean``: median over each task's prompts, then mean over tasks.
    ``single_prompt_mean``: mean over tasks of the first prompt's accuracy."""
    _check_matrix(matrix)
    policy = AggregatePolicy(policy)
    if policy is AggregatePolicy.MEDIAN_THEN_MEAN:
        per_task = [statistics.median(accs) for accs in matrix.values()]
    else:
        per_task = [accs[0] for accs in matrix.values()]
    return float(statistics.fmean(per_task))


def random_baseline(tasks: Sequence[EvalTask | float], policy: AggregatePolicy | str = "median_then_mean") -> float:
    """Mean chance level over tasks, in the units the chance levels are given in.

    A task's chance level does not depend on the prompt, so both policies
    reduce to the mean over tasks.
    """
    AggregatePolicy(policy)
    if not tasks:
        raise ValueError("no tasks")
    levels = []
    for t in tasks:
        level = t.chance if isinstance(t, EvalTask) else t
        if level is None or not np.isfinite(level):
            raise ValueError("undefined chance level")
        levels.append(float(level))
    return float(statistics.fmean(levels))


def monte_carlo_baseline(tasks: Sequence[EvalTask], n_trials: int = 200, seed: int = 0) -> float:
    """Mean-over-tasks accuracy of a uniform random guesser."""
    rng = np.random.default_rng(seed)
    accs = []
    for task in tasks:
        sizes = np.array([len(e.candidates) for e in task.examples])
        golds = np.array([e.gold for e in task.examples])
        guesses = np.floor(rng.random((n_trials, sizes.size)) * sizes).astype(int)
        accs.append(float(np.mean(guesses == golds)))
    return float(np.mean(accs))


@dataclass(frozen=True)
class EvalReport:
    matrix: dict[str, list[float]]
    policy: AggregatePolicy
    random_baseline: float
    scoring: str = ScoringPolicy.SUM.value

    def __post_init__(self):
        _check_matrix(self.matrix)
        object.__setattr__(self, "policy", AggregatePolicy(self.policy))
        for task, accs in self.matrix.items():
            if any(not 0.0 <= a <= 1.0 for a in accs):
                raise ValueError(f"accuracy out of [0, 1] for task {task!r}")

    @property
    def aggregate(self) -> float:
        return aggregate_value(self.matrix, self.policy)

    @property
    def aggregates(self) -> dict[str, float]:
        return {p.value: aggregate_value(self.matrix, p) for p in AggregatePolicy}

    @property
    def spread(self) -> dict[str, tuple[float, float]]:
        return {t: (min(a), max(a)) for t, a in self.matrix.items()}

    def to_dict(self) -> dict:
        return {
            "matrix": self.matrix,
            "policy": self.policy.value,
            "aggregate": self.aggregate,
            "aggregates": self.aggregates,
            "spread": {t: list(v) for t, v in self.spread.items()},
            "random_baseline": self.random_baseline,
            "scoring": self.scoring,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "EvalReport":
        report = cls(
            {k: list(v) for k, v in data["matrix"].items()}, data["policy"], data["random_baseline"],
            data.get("scoring", ScoringPolicy.SUM.value),
        )
        if "aggregate" in data and data["aggregate"] != report.aggregate:
            raise ValueError("stored aggregate disagrees with the accuracy matrix")
        return report

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def aggregate(reports, policy: AggregatePolicy | str = "median_then_mean") -> EvalReport:
    """Merge task rows from several reports (or raw matrices) into one report."""
    if isinstance(reports, Mapping):
        reports = [reports]
    if not reports:
        raise ValueError("no reports to aggregate")
    matrix: dict[str, list[float]] = {}
    baselines = []
    for r in reports:
        rows = r.matrix if isinstance(r, EvalReport) else r
        for task, accs in rows.items():
            if task in matrix:
                raise ValueError(f"task {task!r} appears in more than one report")
            matrix[task] = list(accs)
        if isinstance(r, EvalReport):
            baselines.append((r.random_baseline, len(r.matrix)))
    baseline = sum(b * n for b, n in baselines) / sum(n for _, n in baselines) if baselines else float("nan")
    return EvalReport(matrix, policy, baseline)


def evaluate(
    ckpt: Checkpoint,
    tasks: Sequence[EvalTask],
    policy: AggregatePolicy | str = "median_then_mean",
    scoring: ScoringPolicy | str = ScoringPolicy.SUM,
    seq_len: int | None = None,
) -> EvalReport:
    scoring = ScoringPolicy(scoring)
    matrix = {t.name: [rank_classify(ckpt, t, i, scoring, seq_len) for i in range(len(t.prompts))] for t in tasks}
    return EvalReport(matrix, policy, random_baseline(tasks, policy), scoring.value)
