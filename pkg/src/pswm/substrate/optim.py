"""AdamW with global-norm clipping, and the warmup+cosine schedule.

Clipping happens on the global norm across all gradients before any
moment update; weight decay is decoupled (applied to the parameter, never
added to the gradient). Constants beta1=0.9, beta2=0.999, eps=1e-8.
"""

from __future__ import annotations

import math

import torch

from .params import ParamStore

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def global_norm(grads: dict[str, torch.Tensor]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(g.double().pow(2).sum())
    return math.sqrt(total)


def clip_by_global_norm(grads: dict[str, torch.Tensor], clip_norm: float) -> tuple[dict[str, torch.Tensor], float]:
    """Scale all gradients by clip_norm/norm when norm exceeds clip_norm."""
    norm = global_norm(grads)
    if norm > clip_norm and norm > 0.0:
        scale = clip_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def adamw_step(
    store: ParamStore,
    grads: dict[str, torch.Tensor],
    lr: float,
    weight_decay: float = 0.0,
    clip_norm: float | None = None,
) -> float:
    """One AdamW update in place; returns the pre-clip gradient norm."""
    if not math.isfinite(lr):
        raise ValueError(f"non-finite learning rate {lr}")
    missing = set(grads) - set(store.params)
    if missing:
        raise KeyError(f"gradients for unknown parameters: {sorted(missing)}")
    store.ensure_moments()
    norm = global_norm(grads)
    if clip_norm is not None and norm > clip_norm and norm > 0.0:
        scale = clip_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    store.step += 1
    t = store.step
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    with torch.no_grad():
        for name, g in grads.items():
            p = store.params[name]
            m = store.m[name]
            v = store.v[name]
            m.mul_(ADAM_BETA1).add_(g, alpha=1.0 - ADAM_BETA1)
            v.mul_(ADAM_BETA2).addcmul_(g, g, value=1.0 - ADAM_BETA2)
            update = (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS)
            if weight_decay:
                update = update + weight_decay * p
            p.add_(update, alpha=-lr)
    return norm


def lr_schedule(step: int, total_steps: int, base_lr: float, warmup_steps: int) -> float:
    """Linear ramp 0 -> base_lr over warmup, then cosine decay to 0."""
    if step < 0:
        raise ValueError("step must be non-negative")
    if warmup_steps < 1:
        raise ValueError("warmup_steps must be >= 1")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    if total_steps <= warmup_steps:
        return base_lr
    frac = (step - warmup_steps) / (total_steps - warmup_steps)
    frac = min(frac, 1.0)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))
