"""Throughput benchmark: training episodes/sec, imagination frames/sec, peak RSS."""

from __future__ import annotations

import resource
import time

import torch

from ..substrate import adamw_step, backward
from .config import RunConfig
from .train import step_rng


def _synthetic_batch(cfg: RunConfig, t: int, seed: int):
    g = torch.Generator().manual_seed(seed)
    frames = torch.rand(cfg.batch_size, t + 1, 3, cfg.frame_size, cfg.frame_size, generator=g)
    actions = torch.randint(0, 4, (cfg.batch_size, t), generator=g)
    rewards = (torch.rand(cfg.batch_size, t, generator=g) > 0.95).float()
    return frames, actions, rewards


def bench(cfg: RunConfig, seq_len: int = 512, train_batches: int = 20,
          imagine_context: int = 100, imagine_horizon: int = 100,
          imagine_batches: int = 2, quiet: bool = False) -> dict:
    from ..rssm import RssmWorldModel
    from ..worldmodel import S4WorldModel

    wm_cfg = cfg.wm_config(n_actions=4)
    if cfg.family == "rssm":
        model = RssmWorldModel(wm_cfg, seed=cfg.resolved_seed())
    else:
        model = S4WorldModel(wm_cfg, seed=cfg.resolved_seed())

    kwargs = {"tbtt_k": cfg.tbtt_k} if cfg.family == "rssm" else {}

    def train_step(i: int) -> None:
        frames, actions, rewards = _synthetic_batch(cfg, seq_len, 100 + i)
        out = model.train_losses(frames, actions, rewards, step_rng(0, i), **kwargs)
        grads = backward(out["loss"], model.store.params)
        adamw_step(model.store, grads, lr=1e-4, clip_norm=cfg.resolved_clip())

    train_step(0)  # warmup outside the timer
    t0 = time.time()
    for i in range(train_batches):
        train_step(i + 1)
    train_time = time.time() - t0
    episodes_per_sec = train_batches * cfg.batch_size / train_time

    frames, actions, _ = _synthetic_batch(cfg, imagine_context + imagine_horizon, 7)
    t0 = time.time()
    for i in range(imagine_batches):
        model.imagine(frames[:, :imagine_context + 1], actions[:, :imagine_context],
                      actions[:, imagine_context:], step_rng(1, i), latent_mode="mode")
    imagine_time = time.time() - t0
    frames_per_sec = imagine_batches * cfg.batch_size * imagine_horizon / imagine_time

    peak_rss_mb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0
    report = {
        "family": cfg.family,
        "seq_len": seq_len,
        "train_episodes_per_sec": episodes_per_sec,
        "imagine_frames_per_sec": frames_per_sec,
        "peak_rss_mb": peak_rss_mb,
    }
    if not quiet:
        print(f"{cfg.family}: train {episodes_per_sec:.3f} eps/s, "
              f"imagine {frames_per_sec:.1f} frames/s, peak {peak_rss_mb:.0f} MB")
    return report
