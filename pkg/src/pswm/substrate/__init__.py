"""Differentiable compute substrate: fixed op set, reverse-mode gradients,
AdamW, seeded splittable randomness, and the checkpoint format."""

from . import checkpoint, ops
from .ops import NumericError, ShapeError, Tensor, backward, stop_grad
from .optim import adamw_step, clip_by_global_norm, global_norm, lr_schedule
from .params import ParamStore
from .rng import Rng

__all__ = [
    "ops",
    "checkpoint",
    "Tensor",
    "ShapeError",
    "NumericError",
    "backward",
    "stop_grad",
    "ParamStore",
    "Rng",
    "adamw_step",
    "clip_by_global_norm",
    "global_norm",
    "lr_schedule",
]
