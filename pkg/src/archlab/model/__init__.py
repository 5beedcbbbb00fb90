"""Transformer stacks for causal, non-causal and encoder-decoder variants."""
from .config import (
    CD,
    ED,
    ND,
    FULL_SCALE_DECODER_CONFIG,
    FULL_SCALE_ENCODER_DECODER_CONFIG,
    ArchitectureKind,
    ModelConfig,
)
from .loss import Z_LOSS_COEFFICIENT, LossResult, loss_and_zloss, token_logprobs
from .masks import AttentionMask, build_mask
from .params import ParamTree, count_params, init_params, param_shapes
from .transformer import forward, loss_and_grad

__all__ = [
    "CD",
    "ED",
    "ND",
    "FULL_SCALE_DECODER_CONFIG",
    "FULL_SCALE_ENCODER_DECODER_CONFIG",
    "ArchitectureKind",
    "AttentionMask",
    "LossResult",
    "ModelConfig",
    "ParamTree",
    "Z_LOSS_COEFFICIENT",
    "build_mask",
    "count_params",
    "forward",
    "init_params",
    "loss_and_grad",
    "loss_and_zloss",
    "param_shapes",
    "token_logprobs",
]
