"""Categorical latent states.

A latent is G groups of K-way one-hot vectors. Distributions are softmax
outputs mixed with 1% uniform mass for training stability, sampled with
straight-through gradients: the forward value is the one-hot, the
backward pass treats it as the mixed probability vector.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .substrate import ops
from .substrate.rng import Rng

UNIFORM_MIX = 0.01


def mix_probs(logits: torch.Tensor, unif: float = UNIFORM_MIX) -> torch.Tensor:
    """Mixture of (1-unif) softmax(logits) and unif/K uniform, over last dim."""
    k = logits.shape[-1]
    return (1.0 - unif) * ops.softmax(logits, dim=-1) + unif / k


def sample_latent(logits: torch.Tensor, rng: Rng | None, mode: str = "sample") -> torch.Tensor:
    """One-hot latent (..., G, K) with straight-through gradients.

    mode="sample" draws from the mixed distribution, mode="mode" takes the
    argmax, mode="soft" returns the mixed probabilities themselves (the
    differentiable relaxation used by gradient checks).
    """
    probs = mix_probs(logits)
    if mode == "soft":
        return probs
    if mode == "mode":
        idx = probs.argmax(dim=-1)
    elif mode == "sample":
        if rng is None:
            raise ValueError("mode='sample' needs an rng")
        u = torch.rand(probs.shape[:-1], generator=rng.generator, dtype=torch.float32)
        cum = probs.detach().cumsum(dim=-1)
        idx = (cum < u.to(cum.dtype).unsqueeze(-1)).sum(dim=-1).clamp(max=probs.shape[-1] - 1)
    else:
        raise ValueError(f"unknown latent mode '{mode}'")
    onehot = F.one_hot(idx, probs.shape[-1]).to(probs.dtype)
    # grouping keeps the forward value exactly one-hot
    return onehot + (probs - ops.stop_grad(probs))


def kl_categorical(q_probs: torch.Tensor, p_probs: torch.Tensor) -> torch.Tensor:
    """KL(q || p) summed over groups and classes; (..., G, K) -> (...)."""
    if q_probs.shape != p_probs.shape:
        raise ops.ShapeError("kl_categorical", f"{tuple(q_probs.shape)} vs {tuple(p_probs.shape)}")
    kl = q_probs * (ops.log(q_probs) - ops.log(p_probs))
    return kl.sum(dim=(-2, -1))


def kl_balanced(q_probs: torch.Tensor, p_probs: torch.Tensor, alpha: float | None) -> torch.Tensor:
    """Gradient-balanced KL: the value equals KL(q || p) for every alpha.

    alpha * KL(stop_grad(q) || p) + (1 - alpha) * KL(q || stop_grad(p));
    alpha=1 trains only the prior toward the posterior, alpha=0 only the
    posterior toward the prior. alpha=None is the plain (unbalanced) KL.
    """
    if alpha is None:
        return kl_categorical(q_probs, p_probs)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    prior_side = kl_categorical(ops.stop_grad(q_probs), p_probs)
    posterior_side = kl_categorical(q_probs, ops.stop_grad(p_probs))
    return alpha * prior_side + (1.0 - alpha) * posterior_side


def flatten_latent(z: torch.Tensor) -> torch.Tensor:
    """(..., G, K) one-hot groups -> (..., G*K) vector."""
    return z.reshape(*z.shape[:-2], z.shape[-2] * z.shape[-1])
