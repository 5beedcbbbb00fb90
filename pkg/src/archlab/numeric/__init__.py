"""Dense numerics: primitives, attention, and gradient checking."""
from .attention import attention, attention_backward
from .gradcheck import grad_check, register_op, registered_ops, value_and_grad
from .ops import (
    GradResult,
    Precision,
    as_tensor,
    gelu,
    geglu,
    masked_softmax,
    relative_position_bias,
    relative_position_bucket,
    rms_norm,
    softmax,
)

__all__ = [
    "GradResult",
    "Precision",
    "as_tensor",
    "attention",
    "attention_backward",
    "gelu",
    "geglu",
    "grad_check",
    "masked_softmax",
    "register_op",
    "registered_ops",
    "relative_position_bias",
    "relative_position_bucket",
    "rms_norm",
    "softmax",
    "value_and_grad",
]
