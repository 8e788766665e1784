"""Frame encoder / decoder CNNs.

Kernel-4 stride-2 convolutions with channel-wise layernorm and SiLU;
channel widths m, 2m, 4m, ... over `cnn_layers` stages. The decoder
mirrors the encoder with transposed convolutions; its final layer has no
norm or activation. Frames are floats in [0, 1], centered by -0.5 on the
way in.
"""

from __future__ import annotations

import torch

from .layers import Conv2d, ConvTranspose2d, LayerNorm, Linear
from .substrate import ParamStore, Rng
from .substrate import ops


def _ln_channels(x: torch.Tensor, ln: LayerNorm) -> torch.Tensor:
    return ln(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)


class Encoder:
    def __init__(self, store: ParamStore, prefix: str, rng: Rng, frame_size: int,
                 cnn_layers: int = 3, cnn_mult: int = 32, dtype=torch.float32):
        if frame_size % (2 ** cnn_layers) != 0:
            raise ValueError(f"frame size {frame_size} not divisible by 2^{cnn_layers}")
        rs = rng.split(cnn_layers)
        self.convs = []
        self.lns = []
        c_in = 3
        for i in range(cnn_layers):
            c_out = cnn_mult * (2 ** i)
            self.convs.append(Conv2d(store, f"{prefix}.conv{i}", rs[i], c_in, c_out, dtype=dtype))
            self.lns.append(LayerNorm(store, f"{prefix}.ln{i}", c_out, dtype=dtype))
            c_in = c_out
        self.out_spatial = frame_size // (2 ** cnn_layers)
        self.out_channels = c_in
        self.out_dim = c_in * self.out_spatial * self.out_spatial

    def __call__(self, frames: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) in [0,1] -> flat features (B, out_dim)."""
        x = frames - 0.5
        for conv, ln in zip(self.convs, self.lns):
            x = ops.silu(_ln_channels(conv(x), ln))
        return x.reshape(x.shape[0], -1)


class Decoder:
    def __init__(self, store: ParamStore, prefix: str, rng: Rng, d_in: int, frame_size: int,
                 cnn_layers: int = 3, cnn_mult: int = 32, dtype=torch.float32):
        rs = rng.split(cnn_layers + 1)
        self.spatial = frame_size // (2 ** cnn_layers)
        self.channels = cnn_mult * (2 ** (cnn_layers - 1))
        self.proj = Linear(store, f"{prefix}.proj", rs[0], d_in,
                           self.channels * self.spatial * self.spatial, dtype=dtype)
        self.deconvs = []
        self.lns = []
        c_in = self.channels
        for i in range(cnn_layers):
            last = i == cnn_layers - 1
            c_out = 3 if last else cnn_mult * (2 ** (cnn_layers - 2 - i))
            self.deconvs.append(
                ConvTranspose2d(store, f"{prefix}.deconv{i}", rs[i + 1], c_in, c_out, dtype=dtype))
            self.lns.append(None if last else LayerNorm(store, f"{prefix}.dln{i}", c_out, dtype=dtype))
            c_in = c_out

    def __call__(self, features: torch.Tensor) -> torch.Tensor:
        """(B, d_in) -> frames (B, 3, H, W), raw mean of the unit-variance likelihood."""
        x = self.proj(features).reshape(-1, self.channels, self.spatial, self.spatial)
        for deconv, ln in zip(self.deconvs, self.lns):
            x = deconv(x)
            if ln is not None:
                x = ops.silu(_ln_channels(x, ln))
        return x + 0.5
