"""Zero-shot evaluation by rank classification."""
from .report import (
    AggregatePolicy,
    EvalReport,
    aggregate,
    aggregate_value,
    evaluate,
    monte_carlo_baseline,
    random_baseline,
)
from .scoring import ScoringPolicy, predict, rank_classify, score_candidate, score_candidates
from .tasks import (
    EvalTask,
    PromptTemplate,
    TaskExample,
    load_tasks,
    save_tasks,
    toy_task,
    toy_task_suite,
)

__all__ = [
    "AggregatePolicy",
    "EvalReport",
    "EvalTask",
    "PromptTemplate",
    "ScoringPolicy",
    "TaskExample",
    "aggregate",
    "aggregate_value",
    "evaluate",
    "load_tasks",
    "monte_carlo_baseline",
    "predict",
    "random_baseline",
    "rank_classify",
    "save_tasks",
    "score_candidate",
    "score_candidates",
    "toy_task",
    "toy_task_suite",
]
