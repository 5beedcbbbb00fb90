"""Stage orchestration: pretraining, adaptation, finetuning and checkpoints."""
from .checkpoint import (
    FORMAT_VERSION,
    Checkpoint,
    fresh_checkpoint,
    load_checkpoint,
    read_header,
    save_checkpoint,
)
from .convert import EMPTY_ENCODER, MASK_SWITCH, adapt_lm, adapt_nc_mlm, convert
from .finetune import TaskMixture, multitask_finetune
from .stage import (
    FINETUNE,
    BudgetLedger,
    MetricsWriter,
    TrainingAborted,
    TrainingStage,
    read_metrics,
    run_stage,
    tokens_per_batch,
    validation_loss,
)

__all__ = [
    "BudgetLedger",
    "Checkpoint",
    "EMPTY_ENCODER",
    "FINETUNE",
    "FORMAT_VERSION",
    "MASK_SWITCH",
    "MetricsWriter",
    "TaskMixture",
    "TrainingAborted",
    "TrainingStage",
    "adapt_lm",
    "adapt_nc_mlm",
    "convert",
    "fresh_checkpoint",
    "load_checkpoint",
    "multitask_finetune",
    "read_header",
    "read_metrics",
    "run_stage",
    "save_checkpoint",
    "tokens_per_batch",
    "validation_loss",
]
