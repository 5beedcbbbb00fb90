"""Architecture conversion and the two adaptation recipes."""
from __future__ import annotations

from dataclasses import replace

from ..data.corpus import TokenCorpus
from ..model.config import CD, ED, ND, ArchitectureKind
from .checkpoint import ENCODER_EMPTY, Checkpoint
from .stage import TrainingStage, run_stage

MASK_SWITCH = "mask_switch"
EMPTY_ENCODER = "empty_encoder_experimental"


def convert(ckpt: Checkpoint, new_arch: ArchitectureKind | str, mode: str = MASK_SWITCH) -> Checkpoint:
    """Rebind a checkpoint to another architecture without touching its parameters.

    ``mask_switch`` moves between CD and ND. ``empty_encoder_experimental``
    runs an ED tree as a CD whose encoder always receives an empty input.
    The optimizer state is dropped either way.
    """
    new_arch = ArchitectureKind.parse(new_arch)
    src = ckpt.arch
    if mode == MASK_SWITCH:
        if {src, new_arch} <= {CD, ND} and not ckpt.empty_encoder:
            return replace(ckpt.with_meta(), arch=new_arch, optimizer_state=None)
    elif mode == EMPTY_ENCODER:
        if src is ED and new_arch is CD:
            return replace(ckpt.with_meta(encoder_input=ENCODER_EMPTY), arch=CD, optimizer_state=None)
    else:
        raise ValueError(f"unknown conversion mode {mode!r}")
    raise ValueError(f"no parameter mapping from {src.value} to {new_arch.value} via {mode}")


def _check_lineage(ckpt: Checkpoint, expected: str) -> None:
    hist = ckpt.stage_history
    if not hist or f"{hist[-1]['arch']}:{ckpt.objective}" != expected:
        got = ckpt.lineage() or "fresh initialisation"
        raise ValueError(f"adaptation needs a checkpoint ending in {expected}, got {got}")


def adapt_lm(ckpt: Checkpoint, flm_budget: int, corpus: TokenCorpus, metrics_sink=None, **stage_kw) -> Checkpoint:
    """Switch an ND:MLM model to CD and continue with full language modeling."""
    _check_lineage(ckpt, "ND:MLM")
    stage = TrainingStage(CD, "FLM", flm_budget, **stage_kw)
    return run_stage(convert(ckpt, CD), stage, corpus, metrics_sink)


def adapt_nc_mlm(ckpt: Checkpoint, mlm_budget: int, corpus: TokenCorpus, metrics_sink=None, **stage_kw) -> Checkpoint:
    """Switch a CD:FLM model to ND and continue with span corruption."""
    _check_lineage(ckpt, "CD:FLM")
    stage = TrainingStage(ND, "MLM", mlm_budget, **stage_kw)
    return run_stage(convert(ckpt, ND), stage, corpus, metrics_sink)
