from .gradcheck import grad_check
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Tape,
    Tensor,
    add,
    assert_finite,
    backward,
    cross_entropy_from_logits,
    embedding,
    gelu,
    layer_norm,
    matmul,
    mul,
    reshape,
    softmax,
    sub,
    transpose,
    tmean,
    tsum,
)

__all__ = [
    "Adam", "AdamState", "Tape", "Tensor", "adam_step", "add", "assert_finite", "backward",
    "cross_entropy_from_logits", "embedding", "gelu", "grad_check", "layer_norm", "matmul",
    "mul", "reshape", "softmax", "sub", "transpose", "tmean", "tsum",
]
