"""Small parameterized layers over the substrate op set.

Each layer registers its tensors in a ParamStore under a hierarchical
prefix at construction time and is a pure function of (params, input)
afterwards. Weights use lecun-normal init (std 1/sqrt(fan_in)), biases
start at zero.
"""

from __future__ import annotations

import math

import torch

from .substrate import ParamStore, Rng
from .substrate import ops


class Linear:
    def __init__(self, store: ParamStore, prefix: str, rng: Rng, d_in: int, d_out: int,
                 bias: bool = True, zero_init: bool = False, dtype=torch.float32):
        self.store = store
        self.prefix = prefix
        std = 0.0 if zero_init else 1.0 / math.sqrt(d_in)
        store.add(f"{prefix}.w", rng.normal(d_in, d_out, std=std, dtype=dtype))
        self.has_bias = bias
        if bias:
            store.add(f"{prefix}.b", torch.zeros(d_out, dtype=dtype))

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        y = ops.matmul(x, self.store[f"{self.prefix}.w"])
        if self.has_bias:
            y = y + self.store[f"{self.prefix}.b"]
        return y


class LayerNorm:
    def __init__(self, store: ParamStore, prefix: str, dim: int, dtype=torch.float32):
        self.store = store
        self.prefix = prefix
        store.add(f"{prefix}.scale", torch.ones(dim, dtype=dtype))
        store.add(f"{prefix}.bias", torch.zeros(dim, dtype=dtype))

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        return ops.layernorm(x, self.store[f"{self.prefix}.scale"], self.store[f"{self.prefix}.bias"])


class Conv2d:
    """Kernel-4 stride-2 conv (the only conv shape the substrate exports)."""

    def __init__(self, store: ParamStore, prefix: str, rng: Rng, c_in: int, c_out: int,
                 dtype=torch.float32):
        self.store = store
        self.prefix = prefix
        std = 1.0 / math.sqrt(c_in * 16)
        store.add(f"{prefix}.w", rng.normal(c_out, c_in, 4, 4, std=std, dtype=dtype))
        store.add(f"{prefix}.b", torch.zeros(c_out, dtype=dtype))

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        return ops.conv2d(x, self.store[f"{self.prefix}.w"], self.store[f"{self.prefix}.b"])


class ConvTranspose2d:
    def __init__(self, store: ParamStore, prefix: str, rng: Rng, c_in: int, c_out: int,
                 dtype=torch.float32):
        self.store = store
        self.prefix = prefix
        std = 1.0 / math.sqrt(c_in * 16)
        store.add(f"{prefix}.w", rng.normal(c_in, c_out, 4, 4, std=std, dtype=dtype))
        store.add(f"{prefix}.b", torch.zeros(c_out, dtype=dtype))

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        return ops.conv_transpose2d(x, self.store[f"{self.prefix}.w"], self.store[f"{self.prefix}.b"])


class Mlp:
    """Position-wise MLP: linear -> SiLU per hidden layer -> linear."""

    def __init__(self, store: ParamStore, prefix: str, rng: Rng, d_in: int,
                 hidden: list[int], d_out: int, zero_last: bool = False, dtype=torch.float32):
        rngs = rng.split(len(hidden) + 1)
        self.layers = []
        d = d_in
        for i, h in enumerate(hidden):
            self.layers.append(Linear(store, f"{prefix}.lin{i}", rngs[i], d, h, dtype=dtype))
            d = h
        self.out = Linear(store, f"{prefix}.out", rngs[-1], d, d_out,
                          zero_init=zero_last, dtype=dtype)

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            x = ops.silu(layer(x))
        return self.out(x)
