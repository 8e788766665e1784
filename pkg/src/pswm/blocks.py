"""Stacked sequence blocks around the SSM layers.

Each block applies two SSM sublayers and one position-wise MLP, all with
pre-layernorm residual wiring:

    x -> LN -> SSM -> SiLU -> mix linear -> + x        (twice)
    x -> LN -> linear(d -> 2 d_ff) -> GLU -> SiLU -> linear(d_ff -> d) -> + x

The MLP sublayer is dropped under ``no_mlp``. The stack exposes the same
parallel / single-step contract as the SSM layers themselves; the carried
state is the ordered collection of every SSM layer's internal state.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .layers import LayerNorm, Linear
from .ssm import DiscreteSsm, SsmLayer, pssm_parallel, pssm_step
from .substrate import ParamStore, Rng
from .substrate import ops


@dataclass
class BlockStackConfig:
    n_blocks: int = 6
    d_model: int = 512
    d_ff: int = 2048
    n_state: int = 64
    flavor: str = "dplr"
    no_mlp: bool = False


@dataclass
class PssmState:
    """Ordered internal states, one per SSM layer per block."""
    states: list[torch.Tensor]

    def __iter__(self):
        return iter(self.states)

    def __len__(self) -> int:
        return len(self.states)


class _Block:
    def __init__(self, store: ParamStore, prefix: str, rng: Rng, cfg: BlockStackConfig,
                 dtype=torch.float32):
        r = rng.split(6)
        d = cfg.d_model
        self.cfg = cfg
        self.ln1 = LayerNorm(store, f"{prefix}.ln1", d, dtype=dtype)
        self.ssm1 = SsmLayer(store, f"{prefix}.ssm1", r[0], d, cfg.n_state, cfg.flavor, dtype=dtype)
        self.mix1 = Linear(store, f"{prefix}.mix1", r[1], d, d, dtype=dtype)
        self.ln2 = LayerNorm(store, f"{prefix}.ln2", d, dtype=dtype)
        self.ssm2 = SsmLayer(store, f"{prefix}.ssm2", r[2], d, cfg.n_state, cfg.flavor, dtype=dtype)
        self.mix2 = Linear(store, f"{prefix}.mix2", r[3], d, d, dtype=dtype)
        if not cfg.no_mlp:
            self.ln3 = LayerNorm(store, f"{prefix}.ln3", d, dtype=dtype)
            self.mlp_in = Linear(store, f"{prefix}.mlp_in", r[4], d, 2 * cfg.d_ff, dtype=dtype)
            self.mlp_out = Linear(store, f"{prefix}.mlp_out", r[5], cfg.d_ff, d, dtype=dtype)

    def ssm_layers(self) -> list[SsmLayer]:
        return [self.ssm1, self.ssm2]

    def _mlp(self, x: torch.Tensor) -> torch.Tensor:
        return self.mlp_out(ops.silu(ops.glu(self.mlp_in(x))))

    def parallel(self, x, s1, s2, d1: DiscreteSsm, d2: DiscreteSsm):
        y, s1n = pssm_parallel(d1, self.ln1(x), s1)
        x = x + self.mix1(ops.silu(y))
        y, s2n = pssm_parallel(d2, self.ln2(x), s2)
        x = x + self.mix2(ops.silu(y))
        if not self.cfg.no_mlp:
            x = x + self._mlp(self.ln3(x))
        return x, s1n, s2n

    def step(self, x, s1, s2, d1: DiscreteSsm, d2: DiscreteSsm):
        y, s1n = pssm_step(d1, self.ln1(x), s1)
        x = x + self.mix1(ops.silu(y))
        y, s2n = pssm_step(d2, self.ln2(x), s2)
        x = x + self.mix2(ops.silu(y))
        if not self.cfg.no_mlp:
            x = x + self._mlp(self.ln3(x))
        return x, s1n, s2n


class BlockStack:
    def __init__(self, store: ParamStore, prefix: str, rng: Rng, cfg: BlockStackConfig,
                 dtype=torch.float32):
        self.cfg = cfg
        self.blocks = [
            _Block(store, f"{prefix}.block{i}", child, cfg, dtype=dtype)
            for i, child in enumerate(rng.split(cfg.n_blocks))
        ]

    def ssm_layers(self) -> list[SsmLayer]:
        return [layer for blk in self.blocks for layer in blk.ssm_layers()]

    def materialize(self, method: str = "woodbury") -> list[DiscreteSsm]:
        """Discretize every SSM layer once (reused across recurrent steps)."""
        return [layer.discretize(method) for layer in self.ssm_layers()]

    def zero_state(self, batch: tuple[int, ...], discs: list[DiscreteSsm] | None = None) -> PssmState:
        discs = discs if discs is not None else self.materialize()
        return PssmState([d.zero_state(batch) for d in discs])

    def _check_state(self, state: PssmState) -> None:
        if len(state) != 2 * len(self.blocks):
            raise ops.ShapeError(
                "blocks", f"state holds {len(state)} layers, stack has {2 * len(self.blocks)}")

    def parallel(self, g: torch.Tensor, s0: PssmState | None = None,
                 discs: list[DiscreteSsm] | None = None) -> tuple[torch.Tensor, PssmState]:
        """g: (B, T, d_model) -> (h: (B, T, d_model), terminal PssmState)."""
        if g.dim() != 3 or g.shape[-1] != self.cfg.d_model:
            raise ops.ShapeError("blocks_parallel",
                                 f"expected (B, T, {self.cfg.d_model}), got {tuple(g.shape)}")
        discs = discs if discs is not None else self.materialize()
        if s0 is None:
            s0 = PssmState([d.zero_state((g.shape[0],)) for d in discs])
        self._check_state(s0)
        x = g
        out_states = []
        for i, blk in enumerate(self.blocks):
            x, s1, s2 = blk.parallel(x, s0.states[2 * i], s0.states[2 * i + 1],
                                     discs[2 * i], discs[2 * i + 1])
            out_states += [s1, s2]
        return x, PssmState(out_states)

    def step(self, g: torch.Tensor, state: PssmState,
             discs: list[DiscreteSsm] | None = None) -> tuple[torch.Tensor, PssmState]:
        """g: (B, d_model) -> (h: (B, d_model), next PssmState)."""
        if g.dim() != 2 or g.shape[-1] != self.cfg.d_model:
            raise ops.ShapeError("blocks_step",
                                 f"expected (B, {self.cfg.d_model}), got {tuple(g.shape)}")
        self._check_state(state)
        discs = discs if discs is not None else self.materialize()
        x = g
        out_states = []
        for i, blk in enumerate(self.blocks):
            x, s1, s2 = blk.step(x, state.states[2 * i], state.states[2 * i + 1],
                                 discs[2 * i], discs[2 * i + 1])
            out_states += [s1, s2]
        return x, PssmState(out_states)
