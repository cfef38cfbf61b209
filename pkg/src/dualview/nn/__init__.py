"""Minimal dense neural-network substrate on numpy."""

from dualview.nn.gradcheck import GradCheckReport, fd_gradient_check, numeric_gradient
from dualview.nn.layers import (
    MLP,
    AttentionBlock,
    LayerNorm,
    Linear,
    Module,
    MultiHeadSelfAttention,
    Parameter,
    sigmoid,
    softmax,
)
from dualview.nn.optim import AdamW, clip_gradients, global_grad_norm, lr_schedule

__all__ = [
    "AdamW",
    "AttentionBlock",
    "GradCheckReport",
    "LayerNorm",
    "Linear",
    "MLP",
    "Module",
    "MultiHeadSelfAttention",
    "Parameter",
    "clip_gradients",
    "fd_gradient_check",
    "global_grad_norm",
    "lr_schedule",
    "numeric_gradient",
    "sigmoid",
    "softmax",
]
