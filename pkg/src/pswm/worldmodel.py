"""Latent-variable world model over a stack of PSSM blocks.

Generative structure per step t (actions a, latents z, frames x):

    g_t = MLP(concat[z_{t-1}, a_t])
    h_{1:T}, s_T = Blocks(g_{1:T}, s_0)            (parallel, training)
    h_t, s_t     = Blocks(g_t, s_{t-1})            (single step, imagination)
    prior   p(z_t | z_<t, a_<=t) = MLP(h_t)
    frame   x_t ~ N(Decoder(concat[h_t, z_t]), 1)
    reward  r_t ~ Bernoulli(MLP(concat[h_t, z_t]))  (optional head)

The approximate posterior is factorized per frame, q(z_t | x_t) from the
CNN encoder, so every posterior sample is available in one parallel pass;
the full-history variant runs a second, unshared block stack over encoder
embeddings and actions instead. Training maximizes the ELBO: unit-variance
Gaussian reconstruction (0.5 * SSE per frame) plus the balanced KL between
posterior and prior, KL terms summed from t=1 (z_0 has no prior penalty),
averaged over batch and time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .blocks import BlockStack, BlockStackConfig, PssmState
from .latent import flatten_latent, kl_balanced, mix_probs, sample_latent
from .layers import Linear, Mlp
from .substrate import ParamStore, Rng
from .substrate import ops
from .vision import Decoder, Encoder


@dataclass
class WorldModelConfig:
    g_groups: int = 32
    k_classes: int = 32
    d_model: int = 512
    d_ff: int = 2048
    n_blocks: int = 6
    n_state: int = 64
    flavor: str = "dplr"
    cnn_layers: int = 3
    cnn_mult: int = 32
    mlp_hidden: int = 512
    alpha: float = 0.8
    posterior_mode: str = "factorized"
    no_mlp: bool = False
    reward_head: bool = False
    frame_size: int = 40
    n_actions: int = 4
    gru_hidden: int = 2048
    max_horizon: int = 4096

    def __post_init__(self):
        for name in ("g_groups", "k_classes", "d_model", "d_ff", "n_blocks", "n_state",
                     "cnn_layers", "cnn_mult", "mlp_hidden", "frame_size", "n_actions",
                     "gru_hidden"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.posterior_mode not in ("factorized", "full_history"):
            raise ValueError(f"unknown posterior_mode '{self.posterior_mode}'")

    @property
    def latent_dim(self) -> int:
        return self.g_groups * self.k_classes


@dataclass
class ImaginationResult:
    """Rollout products for steps C+1..T (the query horizon)."""
    frames: torch.Tensor                    # (B, Tq, 3, H, W) decoded means
    latents: torch.Tensor                   # (B, Tq, G, K) one-hot
    prior_logits: torch.Tensor              # (B, Tq, G, K)
    reward_probs: torch.Tensor | None       # (B, Tq)
    mse_per_step: torch.Tensor | None       # (Tq,) vs ground truth, 0-255 scale
    final_frame_mse: torch.Tensor | None = None

    def __post_init__(self):
        tq = self.frames.shape[1]
        if self.latents.shape[1] != tq or self.prior_logits.shape[1] != tq:
            raise ValueError("imagination outputs disagree on horizon length")


def bce_with_logits(logit: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Stable Bernoulli cross-entropy from logits."""
    return torch.clamp(logit, min=0) - logit * target + torch.log1p(torch.exp(-logit.abs()))


def frame_sse(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """0.5 * sum of squared error over pixels, per (batch, time) frame."""
    return 0.5 * (pred - target).pow(2).sum(dim=(-3, -2, -1))


def mse_255(pred: torch.Tensor, target: torch.Tensor, dims) -> torch.Tensor:
    """Mean squared error on the 0-255 pixel scale over the given dims."""
    return ((pred.clamp(0.0, 1.0) - target) * 255.0).pow(2).mean(dim=dims)


class S4WorldModel:
    """World model with a parallelizable SSM backbone (s4 or s5 flavor)."""

    family = "s4wm"

    def __init__(self, cfg: WorldModelConfig, store: ParamStore | None = None,
                 seed: int = 0, dtype=torch.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.store = store if store is not None else ParamStore()
        rng = Rng(seed)
        r = rng.split(10)
        gk = cfg.latent_dim
        self.encoder = Encoder(self.store, "encoder", r[0], cfg.frame_size,
                               cfg.cnn_layers, cfg.cnn_mult, dtype=dtype)
        blocks_cfg = BlockStackConfig(cfg.n_blocks, cfg.d_model, cfg.d_ff,
                                      cfg.n_state, cfg.flavor, cfg.no_mlp)
        if cfg.posterior_mode == "factorized":
            self.post_head = Mlp(self.store, "posterior", r[1], self.encoder.out_dim,
                                 [cfg.mlp_hidden], gk, dtype=dtype)
        else:
            self.post_embed = Linear(self.store, "posterior.embed", r[1],
                                     self.encoder.out_dim, cfg.d_model, dtype=dtype)
            self.post_g = Mlp(self.store, "posterior.g", r[6], cfg.d_model + cfg.n_actions,
                              [cfg.mlp_hidden], cfg.d_model, dtype=dtype)
            self.post_blocks = BlockStack(self.store, "posterior.blocks", r[7],
                                          blocks_cfg, dtype=dtype)
            self.post_head = Mlp(self.store, "posterior.head", r[8], cfg.d_model,
                                 [cfg.mlp_hidden], gk, dtype=dtype)
        self.g_mlp = Mlp(self.store, "g", r[2], gk + cfg.n_actions,
                         [cfg.mlp_hidden], cfg.d_model, dtype=dtype)
        self.blocks = BlockStack(self.store, "blocks", r[3], blocks_cfg, dtype=dtype)
        self.prior_mlp = Mlp(self.store, "prior", r[4], cfg.d_model,
                             [cfg.mlp_hidden], gk, dtype=dtype)
        self.decoder = Decoder(self.store, "decoder", r[5], cfg.d_model + gk,
                               cfg.frame_size, cfg.cnn_layers, cfg.cnn_mult, dtype=dtype)
        if cfg.reward_head:
            self.reward_mlp = Mlp(self.store, "reward", r[9], cfg.d_model + gk,
                                  [cfg.mlp_hidden], 1, dtype=dtype)

    # -- pieces ------------------------------------------------------------

    def _onehot_actions(self, actions: torch.Tensor) -> torch.Tensor:
        return torch.nn.functional.one_hot(actions.long(), self.cfg.n_actions).to(self.dtype)

    def encode_posterior(self, frames: torch.Tensor) -> torch.Tensor:
        """Per-frame posterior logits; frames (..., 3, H, W) -> (..., G, K)."""
        if self.cfg.posterior_mode != "factorized":
            raise ValueError("encode_posterior is the factorized path; "
                             "use encode_posterior_full in full_history mode")
        lead = frames.shape[:-3]
        feats = self.encoder(frames.reshape(-1, *frames.shape[-3:]))
        logits = self.post_head(feats)
        return logits.reshape(*lead, self.cfg.g_groups, self.cfg.k_classes)

    def encode_posterior_full(self, frames: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        """History-conditioned posterior logits for all steps in one pass.

        frames (B, T+1, 3, H, W), actions (B, T) -> logits (B, T+1, G, K).
        Step 0 uses a dummy all-zero action.
        """
        if self.cfg.posterior_mode != "full_history":
            raise ValueError("encode_posterior_full needs posterior_mode='full_history'")
        bsz, t1 = frames.shape[:2]
        feats = self.encoder(frames.reshape(-1, *frames.shape[-3:]))
        e = self.post_embed(feats).reshape(bsz, t1, self.cfg.d_model)
        a_full = torch.zeros(bsz, t1, self.cfg.n_actions, dtype=self.dtype)
        if t1 > 1:
            a_full[:, 1:] = self._onehot_actions(actions)
        g = self.post_g(ops.concat([e, a_full], dim=-1))
        h, _ = self.post_blocks.parallel(g)
        return self.post_head(h).reshape(bsz, t1, self.cfg.g_groups, self.cfg.k_classes)

    def _posterior_logits(self, frames: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        if self.cfg.posterior_mode == "factorized":
            return self.encode_posterior(frames)
        return self.encode_posterior_full(frames, actions)

    def prior_head(self, h: torch.Tensor) -> torch.Tensor:
        logits = self.prior_mlp(h)
        return logits.reshape(*h.shape[:-1], self.cfg.g_groups, self.cfg.k_classes)

    def decode(self, h: torch.Tensor, z_flat: torch.Tensor) -> torch.Tensor:
        """Decode (..., d_model) + (..., G*K) into frame means (..., 3, H, W)."""
        lead = h.shape[:-1]
        x = self.decoder(ops.concat([h, z_flat], dim=-1).reshape(-1, h.shape[-1] + z_flat.shape[-1]))
        return x.reshape(*lead, 3, self.cfg.frame_size, self.cfg.frame_size)

    def predict_reward(self, h: torch.Tensor, z_flat: torch.Tensor) -> torch.Tensor:
        """Bernoulli logit of the reward at each step."""
        if not self.cfg.reward_head:
            raise ValueError("reward head is disabled in this config")
        return self.reward_mlp(ops.concat([h, z_flat], dim=-1)).squeeze(-1)

    # -- training / evaluation ---------------------------------------------

    def teacher_forced(self, frames: torch.Tensor, actions: torch.Tensor,
                       rng: Rng | None, latent_mode: str = "sample",
                       decode_frames: bool = False) -> dict:
        """Posterior-path pass over a full episode batch.

        frames (B, T+1, 3, H, W) floats in [0,1]; actions (B, T) ints.
        Returns posterior/prior logits, sampled latents, block outputs, and
        (optionally) decoded frames for steps 1..T.
        """
        bsz, t1 = frames.shape[:2]
        t = t1 - 1
        post_logits = self._posterior_logits(frames, actions)
        z = sample_latent(post_logits, rng, latent_mode)
        z_flat = flatten_latent(z)
        a_onehot = self._onehot_actions(actions)
        g = self.g_mlp(ops.concat([z_flat[:, :-1], a_onehot], dim=-1))
        h, _ = self.blocks.parallel(g)
        prior_logits = self.prior_head(h)
        out = {"post_logits": post_logits, "prior_logits": prior_logits,
               "z": z, "z_flat": z_flat, "h": h}
        if decode_frames:
            out["decoded"] = self.decode(h, z_flat[:, 1:])
        if self.cfg.reward_head:
            out["reward_logits"] = self.predict_reward(h, z_flat[:, 1:])
        return out

    def train_losses(self, frames: torch.Tensor, actions: torch.Tensor,
                     rewards: torch.Tensor | None, rng: Rng | None,
                     latent_mode: str = "sample",
                     kl_alpha: float | None | str = "config") -> dict:
        """Negative ELBO and its components, averaged over batch and time."""
        alpha = self.cfg.alpha if kl_alpha == "config" else kl_alpha
        tf = self.teacher_forced(frames, actions, rng, latent_mode, decode_frames=True)
        target = frames[:, 1:]
        recon = frame_sse(tf["decoded"], target)                      # (B, T)
        q = mix_probs(tf["post_logits"][:, 1:])
        p = mix_probs(tf["prior_logits"])
        kl = kl_balanced(q, p, alpha)                                 # (B, T)
        loss = recon.mean() + kl.mean()
        out = {
            "recon": recon.mean().detach(),
            "kl": kl.mean().detach(),
            "recon_mse": mse_255(tf["decoded"], target, dims=(0, 1, 2, 3, 4)).detach(),
        }
        if self.cfg.reward_head and rewards is not None:
            rloss = bce_with_logits(tf["reward_logits"], rewards.to(self.dtype)).mean()
            loss = loss + rloss
            out["reward_loss"] = rloss.detach()
        out["loss"] = loss
        return out

    def imagine(self, ctx_frames: torch.Tensor, ctx_actions: torch.Tensor,
                query_actions: torch.Tensor, rng: Rng | None,
                latent_mode: str = "mode",
                gt_frames: torch.Tensor | None = None) -> ImaginationResult:
        """Autoregressive rollout of the prior given context observations.

        ctx_frames (B, C+1, 3, H, W), ctx_actions (B, C), query_actions
        (B, Tq >= 1). The context is encoded in one parallel pass that also
        consumes the first query action; each further step rolls the
        recurrent path and samples the next latent from the prior. Frames
        decode in parallel at the end. latent_mode="mode" gives the
        deterministic evaluation rollout.
        """
        tq = query_actions.shape[1]
        if tq < 1:
            raise ValueError("query must contain at least one action")
        if tq > self.cfg.max_horizon:
            raise ValueError(f"horizon {tq} exceeds configured max {self.cfg.max_horizon}")
        with torch.no_grad():
            post_logits = self._posterior_logits(ctx_frames, ctx_actions)
            z_ctx = flatten_latent(sample_latent(post_logits, rng, latent_mode))
            a_ctx = self._onehot_actions(
                ops.concat([ctx_actions, query_actions[:, :1]], dim=-1))
            g = self.g_mlp(ops.concat([z_ctx, a_ctx], dim=-1))
            discs = self.blocks.materialize()
            h_ctx, state = self.blocks.parallel(g, discs=discs)
            h_t = h_ctx[:, -1]
            hs, zs, logits_list = [], [], []
            for i in range(tq):
                if i > 0:
                    g_t = self.g_mlp(ops.concat(
                        [zs[-1], self._onehot_actions(query_actions[:, i])], dim=-1))
                    h_t, state = self.blocks.step(g_t, state, discs)
                prior_logits = self.prior_head(h_t)
                z_t = flatten_latent(sample_latent(prior_logits, rng, latent_mode))
                hs.append(h_t)
                zs.append(z_t)
                logits_list.append(prior_logits)
            h_all = torch.stack(hs, dim=1)
            z_all = torch.stack(zs, dim=1)
            frames = self.decode(h_all, z_all)
            rewards = None
            if self.cfg.reward_head:
                rewards = ops.sigmoid(self.predict_reward(h_all, z_all))
            mse = None
            if gt_frames is not None:
                mse = mse_255(frames, gt_frames, dims=(0, 2, 3, 4))
            g_, k_ = self.cfg.g_groups, self.cfg.k_classes
            return ImaginationResult(
                frames=frames,
                latents=z_all.reshape(*z_all.shape[:-1], g_, k_),
                prior_logits=torch.stack(logits_list, dim=1),
                reward_probs=rewards,
                mse_per_step=mse,
            )
