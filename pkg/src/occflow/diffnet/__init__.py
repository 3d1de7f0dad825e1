"""Reverse-mode autodiff tape and differentiable dense kernels."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .ops import (
    CorrelationSpec,
    add,
    bce_logits_op,
    concat,
    conv2d,
    correlation,
    correlation_bi,
    epe_loss_op,
    leaky_relu,
    scale,
    sigmoid,
    sum_all,
    upconv2d,
    upsample2x,
    warp_diff,
    weighted_sum,
)
from .tape import DiffError, Tape, TensorNode

__all__ = [
    "Tape",
    "TensorNode",
    "DiffError",
    "CorrelationSpec",
    "conv2d",
    "upconv2d",
    "leaky_relu",
    "concat",
    "add",
    "scale",
    "sigmoid",
    "correlation",
    "correlation_bi",
    "warp_diff",
    "upsample2x",
    "sum_all",
    "epe_loss_op",
    "bce_logits_op",
    "weighted_sum",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]
