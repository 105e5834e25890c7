"""Small dense-tensor kit with reverse-mode gradients."""

from .layers import (AttentionParams, DenseLayer, EmptyContextError, Mlp, ParamSet, cosine,
                     cross_attention, dense_forward, softmax)
from .optim import Optimizer, cosine_lr, sgd_cosine_step
from .tensor import (ContractError, DimensionError, Tensor, backward, numeric_grad, parameter,
                     relative_error)

__all__ = [
    "AttentionParams", "ContractError", "DenseLayer", "DimensionError", "EmptyContextError",
    "Mlp", "Optimizer", "ParamSet", "Tensor", "backward", "cosine", "cosine_lr",
    "cross_attention", "dense_forward", "numeric_grad", "parameter", "relative_error",
    "sgd_cosine_step", "softmax",
]
