"""Recurrent (GRU) world-model baseline with truncated backpropagation.

Shares the encoder, decoder, categorical-latent and KL machinery with the
PSSM world model so that backbone comparisons isolate the sequence core.
One shared GRU compresses (z_<t, a_<=t) into a deterministic h_t:

    h_t = GRU(h_{t-1}, MLP(concat[z_{t-1}, a_t]))       h_0 = 0
    prior      p(z_t | .)  = MLP(h_t)
    posterior  q(z_t | .)  = MLP(concat[h_t, e_t]),  e_t = Encoder(x_t)
    frame      x_t ~ N(Decoder(concat[h_t, z_t]), 1)

Unlike the PSSM model, the posterior here conditions on history (through
h_t) and the ELBO includes the t = 0 term. Training processes the
sequence in chunks of `tbtt_k` steps, stopping gradients on the carried
(h, z) at each chunk boundary.
"""

from __future__ import annotations

import torch

from .latent import flatten_latent, kl_balanced, mix_probs, sample_latent
from .layers import Linear, Mlp
from .substrate import ParamStore, Rng
from .substrate import ops
from .vision import Decoder, Encoder
from .worldmodel import (ImaginationResult, WorldModelConfig, bce_with_logits,
                         frame_sse, mse_255)


def tanh(x: torch.Tensor) -> torch.Tensor:
    # composed from the exported op set: tanh(x) = 2 sigmoid(2x) - 1
    return 2.0 * ops.sigmoid(2.0 * x) - 1.0


class GruCell:
    """Standard gated recurrent unit (reset/update gates, candidate state)."""

    def __init__(self, store: ParamStore, prefix: str, rng: Rng, d_in: int, d_hidden: int,
                 dtype=torch.float32):
        r = rng.split(6)
        self.w_ir = Linear(store, f"{prefix}.w_ir", r[0], d_in, d_hidden, dtype=dtype)
        self.w_hr = Linear(store, f"{prefix}.w_hr", r[1], d_hidden, d_hidden, bias=False, dtype=dtype)
        self.w_iz = Linear(store, f"{prefix}.w_iz", r[2], d_in, d_hidden, dtype=dtype)
        self.w_hz = Linear(store, f"{prefix}.w_hz", r[3], d_hidden, d_hidden, bias=False, dtype=dtype)
        self.w_in = Linear(store, f"{prefix}.w_in", r[4], d_in, d_hidden, dtype=dtype)
        self.w_hn = Linear(store, f"{prefix}.w_hn", r[5], d_hidden, d_hidden, bias=False, dtype=dtype)

    def __call__(self, h: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        r = ops.sigmoid(self.w_ir(x) + self.w_hr(h))
        z = ops.sigmoid(self.w_iz(x) + self.w_hz(h))
        n = tanh(self.w_in(x) + r * self.w_hn(h))
        return (1.0 - z) * n + z * h


class RssmWorldModel:
    family = "rssm"

    def __init__(self, cfg: WorldModelConfig, store: ParamStore | None = None,
                 seed: int = 0, dtype=torch.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.store = store if store is not None else ParamStore()
        r = Rng(seed).split(8)
        gk = cfg.latent_dim
        dh = cfg.gru_hidden
        self.encoder = Encoder(self.store, "encoder", r[0], cfg.frame_size,
                               cfg.cnn_layers, cfg.cnn_mult, dtype=dtype)
        self.g_mlp = Mlp(self.store, "g", r[1], gk + cfg.n_actions,
                         [cfg.mlp_hidden], cfg.mlp_hidden, dtype=dtype)
        self.gru = GruCell(self.store, "gru", r[2], cfg.mlp_hidden, dh, dtype=dtype)
        self.prior_mlp = Mlp(self.store, "prior", r[3], dh, [cfg.mlp_hidden], gk, dtype=dtype)
        self.post_mlp = Mlp(self.store, "posterior", r[4], dh + self.encoder.out_dim,
                            [cfg.mlp_hidden], gk, dtype=dtype)
        self.decoder = Decoder(self.store, "decoder", r[5], dh + gk,
                               cfg.frame_size, cfg.cnn_layers, cfg.cnn_mult, dtype=dtype)
        if cfg.reward_head:
            self.reward_mlp = Mlp(self.store, "reward", r[6], dh + gk,
                                  [cfg.mlp_hidden], 1, dtype=dtype)

    # -- pieces ------------------------------------------------------------

    def _onehot_actions(self, actions: torch.Tensor) -> torch.Tensor:
        return torch.nn.functional.one_hot(actions.long(), self.cfg.n_actions).to(self.dtype)

    def _logits(self, flat: torch.Tensor) -> torch.Tensor:
        return flat.reshape(*flat.shape[:-1], self.cfg.g_groups, self.cfg.k_classes)

    def rssm_step(self, h: torch.Tensor, z_flat: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        """h_t from (h_{t-1}, z_{t-1}, a_t)."""
        x = self.g_mlp(ops.concat([z_flat, self._onehot_actions(action)], dim=-1))
        return self.gru(h, x)

    def prior_head(self, h: torch.Tensor) -> torch.Tensor:
        return self._logits(self.prior_mlp(h))

    def posterior_head(self, h: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
        return self._logits(self.post_mlp(ops.concat([h, e], dim=-1)))

    def decode(self, h: torch.Tensor, z_flat: torch.Tensor) -> torch.Tensor:
        lead = h.shape[:-1]
        x = self.decoder(ops.concat([h, z_flat], dim=-1).reshape(-1, h.shape[-1] + z_flat.shape[-1]))
        return x.reshape(*lead, 3, self.cfg.frame_size, self.cfg.frame_size)

    def predict_reward(self, h: torch.Tensor, z_flat: torch.Tensor) -> torch.Tensor:
        if not self.cfg.reward_head:
            raise ValueError("reward head is disabled in this config")
        return self.reward_mlp(ops.concat([h, z_flat], dim=-1)).squeeze(-1)

    # -- training ------------------------------------------------------------

    def teacher_forced(self, frames: torch.Tensor, actions: torch.Tensor,
                       rng: Rng | None, latent_mode: str = "sample",
                       decode_frames: bool = False, tbtt_k: int | None = None) -> dict:
        """Posterior-path rollout over t = 0..T.

        With tbtt_k set, gradients stop on (h, z) every tbtt_k steps.
        Returns logits/latents/h for all steps (posterior and prior both
        cover t = 0..T here; the prior at t=0 comes from h_0 = 0).
        """
        bsz, t1 = frames.shape[:2]
        dh = self.cfg.gru_hidden
        feats = self.encoder(frames.reshape(-1, *frames.shape[-3:]))
        e = feats.reshape(bsz, t1, -1)
        h = torch.zeros(bsz, dh, dtype=self.dtype)
        hs, post_list, prior_list, zs = [], [], [], []
        z_flat = None
        for t in range(t1):
            if t > 0:
                h = self.rssm_step(h, z_flat, actions[:, t - 1])
            if tbtt_k is not None and t > 0 and t % tbtt_k == 0:
                h = ops.stop_grad(h)
                z_flat = ops.stop_grad(z_flat)
            prior_list.append(self.prior_head(h))
            post = self.posterior_head(h, e[:, t])
            post_list.append(post)
            z = sample_latent(post, rng, latent_mode)
            z_flat = flatten_latent(z)
            zs.append(z_flat)
            hs.append(h)
        out = {
            "post_logits": torch.stack(post_list, dim=1),
            "prior_logits": torch.stack(prior_list, dim=1),
            "z_flat": torch.stack(zs, dim=1),
            "h": torch.stack(hs, dim=1),
        }
        if decode_frames:
            out["decoded"] = self.decode(out["h"], out["z_flat"])
        if self.cfg.reward_head:
            out["reward_logits"] = self.predict_reward(out["h"][:, 1:], out["z_flat"][:, 1:])
        return out

    def train_losses(self, frames: torch.Tensor, actions: torch.Tensor,
                     rewards: torch.Tensor | None, rng: Rng | None,
                     latent_mode: str = "sample", kl_alpha: float | None | str = "config",
                     tbtt_k: int | None = None) -> dict:
        alpha = self.cfg.alpha if kl_alpha == "config" else kl_alpha
        tf = self.teacher_forced(frames, actions, rng, latent_mode,
                                 decode_frames=True, tbtt_k=tbtt_k)
        recon = frame_sse(tf["decoded"], frames)                       # (B, T+1)
        q = mix_probs(tf["post_logits"])
        p = mix_probs(tf["prior_logits"])
        kl = kl_balanced(q, p, alpha)                                  # (B, T+1)
        loss = recon.mean() + kl.mean()
        out = {
            "recon": recon.mean().detach(),
            "kl": kl.mean().detach(),
            "recon_mse": mse_255(tf["decoded"][:, 1:], frames[:, 1:], dims=(0, 1, 2, 3, 4)).detach(),
        }
        if self.cfg.reward_head and rewards is not None:
            rloss = bce_with_logits(tf["reward_logits"], rewards.to(self.dtype)).mean()
            loss = loss + rloss
            out["reward_loss"] = rloss.detach()
        out["loss"] = loss
        return out

    # -- imagination ---------------------------------------------------------

    def imagine(self, ctx_frames: torch.Tensor, ctx_actions: torch.Tensor,
                query_actions: torch.Tensor, rng: Rng | None,
                latent_mode: str = "mode",
                gt_frames: torch.Tensor | None = None) -> ImaginationResult:
        tq = query_actions.shape[1]
        if tq < 1:
            raise ValueError("query must contain at least one action")
        with torch.no_grad():
            bsz, c1 = ctx_frames.shape[:2]
            feats = self.encoder(ctx_frames.reshape(-1, *ctx_frames.shape[-3:]))
            e = feats.reshape(bsz, c1, -1)
            h = torch.zeros(bsz, self.cfg.gru_hidden, dtype=self.dtype)
            z_flat = None
            for t in range(c1):
                if t > 0:
                    h = self.rssm_step(h, z_flat, ctx_actions[:, t - 1])
                post = self.posterior_head(h, e[:, t])
                z_flat = flatten_latent(sample_latent(post, rng, latent_mode))
            hs, zs, logits_list = [], [], []
            for i in range(tq):
                h = self.rssm_step(h, z_flat, query_actions[:, i])
                prior_logits = self.prior_head(h)
                z_flat = flatten_latent(sample_latent(prior_logits, rng, latent_mode))
                hs.append(h)
                zs.append(z_flat)
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
