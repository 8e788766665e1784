"""Training loop: deterministic, resumable, best-validation checkpointing."""

from __future__ import annotations

import contextlib
import csv
import math
import os
import time

import torch

from ..envs.dataset import DatasetReader
from ..rssm import RssmWorldModel
from ..substrate import NumericError, Rng, adamw_step, backward, lr_schedule
from ..substrate import checkpoint as ckpt
from ..substrate.rng import _splitmix64
from ..worldmodel import S4WorldModel
from .config import DataError, RunConfig
from .data import BatchLoader

VAL_RNG_TAG = 0x5641  # "VA"


def step_rng(seed: int, step: int, tag: int = 0) -> Rng:
    return Rng(_splitmix64(seed) ^ _splitmix64(step * 2 + 1) ^ _splitmix64(tag))


@contextlib.contextmanager
def run_lock(run_dir: str):
    """Exclusive ownership of a run directory via a lockfile."""
    os.makedirs(run_dir, exist_ok=True)
    lock_path = os.path.join(run_dir, "LOCK")
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise DataError(f"run directory {run_dir} is locked (stale {lock_path}?)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(OSError):
            os.remove(lock_path)


def build_model(cfg: RunConfig, reader: DatasetReader):
    if cfg.frame_size != reader.frame_size:
        raise DataError(
            f"config frame_size {cfg.frame_size} != dataset frame size {reader.frame_size}")
    wm_cfg = cfg.wm_config(n_actions=4)
    seed = cfg.resolved_seed()
    if cfg.family == "rssm":
        return RssmWorldModel(wm_cfg, seed=seed)
    return S4WorldModel(wm_cfg, seed=seed)


def _val_loss(model, loader: BatchLoader, cfg: RunConfig, n_episodes: int) -> float:
    total, count = 0.0, 0
    rng = step_rng(cfg.resolved_seed(), 0, tag=VAL_RNG_TAG)
    idx = loader.indices[:n_episodes]
    with torch.no_grad():
        for i in range(0, len(idx), cfg.batch_size):
            frames, actions, rewards = loader.load(idx[i:i + cfg.batch_size])
            kwargs = {"tbtt_k": None} if model.family == "rssm" else {}
            out = model.train_losses(frames, actions, rewards, rng, **kwargs)
            total += float(out["loss"]) * frames.shape[0]
            count += frames.shape[0]
    return total / max(count, 1)


def train(cfg: RunConfig, run_dir: str, resume: bool = False,
          log_every: int = 50, quiet: bool = False) -> dict:
    if not cfg.dataset:
        raise DataError("no dataset configured")
    try:
        reader = DatasetReader(cfg.dataset)
    except (OSError, ValueError) as e:
        raise DataError(str(e)) from e
    seed = cfg.resolved_seed()
    model = build_model(cfg, reader)
    loader = BatchLoader(reader, "train", cfg.batch_size, seed)
    val_loader = BatchLoader(reader, "val", cfg.batch_size, seed)
    total_steps = cfg.max_steps if cfg.max_steps > 0 else cfg.epochs * loader.steps_per_epoch
    val_every = cfg.val_every if cfg.val_every > 0 else loader.steps_per_epoch
    base_lr = cfg.resolved_lr()
    clip = cfg.resolved_clip()
    decay = cfg.resolved_decay()

    with open(os.path.join(run_dir, "config.txt"), "w", encoding="utf-8") as f:
        f.write(cfg.to_text())
    metrics_path = os.path.join(run_dir, "metrics.csv")
    best_path = os.path.join(run_dir, "best.ckpt")
    last_path = os.path.join(run_dir, "last.ckpt")

    start_step = 0
    if resume:
        if not os.path.exists(last_path):
            raise DataError(f"cannot resume: {last_path} missing")
        ckpt.load(last_path, model.store)
        start_step = model.store.step
    best_val = math.inf
    best_val_path = os.path.join(run_dir, "best_val.txt")
    if resume and os.path.exists(best_val_path):
        with open(best_val_path) as f:
            best_val = float(f.read().strip())

    new_log = not (resume and os.path.exists(metrics_path))
    log_f = open(metrics_path, "w" if new_log else "a", newline="")
    writer = csv.writer(log_f)
    if new_log:
        writer.writerow(["step", "loss", "recon", "kl", "reward_loss", "lr",
                         "grad_norm", "wallclock"])
    t_start = time.time()
    try:
        for step in range(start_step, total_steps):
            if decay == "cosine":
                lr = lr_schedule(step, total_steps, base_lr, cfg.warmup_steps)
            else:
                lr = base_lr
            frames, actions, rewards = loader.batch(step)
            rng = step_rng(seed, step)
            kwargs = {"tbtt_k": cfg.tbtt_k} if model.family == "rssm" else {}
            out = model.train_losses(frames, actions, rewards, rng, **kwargs)
            loss = out["loss"]
            if not torch.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at step {step}: recon={float(out['recon']):.4g} "
                    f"kl={float(out['kl']):.4g} lr={lr:.3g}")
            grads = backward(loss, model.store.params)
            gnorm = adamw_step(model.store, grads, lr=lr,
                               weight_decay=cfg.weight_decay, clip_norm=clip)
            writer.writerow([step, f"{float(loss.detach()):.6f}", f"{float(out['recon']):.6f}",
                             f"{float(out['kl']):.6f}",
                             f"{float(out.get('reward_loss', 0.0)):.6f}",
                             f"{lr:.8f}", f"{gnorm:.4f}", f"{time.time() - t_start:.2f}"])
            if not quiet and (step % log_every == 0 or step == total_steps - 1):
                print(f"step {step}/{total_steps} loss {float(loss.detach()):.3f} "
                      f"recon {float(out['recon']):.3f} kl {float(out['kl']):.3f} "
                      f"lr {lr:.2e}", flush=True)
            if (step + 1) % val_every == 0 or step == total_steps - 1:
                log_f.flush()
                val = _val_loss(model, val_loader, cfg, min(cfg.val_episodes,
                                                            len(val_loader.indices)))
                ckpt.save(last_path, model.store)
                if val < best_val:
                    best_val = val
                    ckpt.save(best_path, model.store)
                    with open(best_val_path, "w") as f:
                        f.write(f"{best_val:.8f}\n")
                if not quiet:
                    print(f"step {step + 1}: val loss {val:.3f} (best {best_val:.3f})",
                          flush=True)
    finally:
        log_f.close()
    if not os.path.exists(best_path):
        ckpt.save(best_path, model.store)
    return {"steps": total_steps, "best_val": best_val,
            "wallclock": time.time() - t_start}
