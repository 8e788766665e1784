"""Evaluation protocol, identical for every backbone.

Teacher-forced reconstruction MSE, per-step generation MSE from mode
(deterministic) imagination rollouts, reward accuracy in inference
(full-sequence posterior pass) and within imagination, door-pixel MSE for
the keys-and-doors task, PNG comparison grids and a per-step CSV. All
pixel MSEs are on the 0-255 scale.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np
import torch
from PIL import Image

from ..envs.dataset import DatasetReader, make_world
from ..envs.render import cell_pixel_mask
from ..envs.world import DOOR_LOCKED, DOOR_UNLOCKED
from .data import BatchLoader
from .train import step_rng

MAX_PNG_COLS = 16


def _to_uint8(frames: torch.Tensor) -> np.ndarray:
    return (frames.clamp(0, 1) * 255).round().to(torch.uint8).numpy()


def _dump_png(path: str, gt: torch.Tensor, imagined: torch.Tensor) -> None:
    """Rows: ground truth / imagination / absolute error; <=16 sampled columns."""
    tq, _, h, w = gt.shape
    stride = max(1, -(-tq // MAX_PNG_COLS))
    cols = list(range(0, tq, stride))
    gap = 2
    canvas = np.zeros((3 * h + 2 * gap, len(cols) * (w + gap) - gap, 3), dtype=np.uint8)
    for j, t in enumerate(cols):
        x0 = j * (w + gap)
        g = _to_uint8(gt[t].permute(1, 2, 0))
        m = _to_uint8(imagined[t].permute(1, 2, 0))
        err = _to_uint8((gt[t] - imagined[t]).abs().clamp(0, 1).permute(1, 2, 0))
        canvas[0:h, x0:x0 + w] = g
        canvas[h + gap:2 * h + gap, x0:x0 + w] = m
        canvas[2 * h + 2 * gap:, x0:x0 + w] = err
    Image.fromarray(canvas).save(path)


def _final_door_mask(reader: DatasetReader, ep) -> np.ndarray:
    world = make_world(reader.kind, reader.param, ep.seed)
    for action in ep.actions:
        world.step(int(action))
    return cell_pixel_mask(world, reader.frame_size, (DOOR_LOCKED, DOOR_UNLOCKED))


def evaluate(model, reader: DatasetReader, split: str = "test", horizon: int = 0,
             max_episodes: int = 0, batch_size: int = 8, seed: int = 0,
             out_dir: str | None = None, dump_pngs: int = 0) -> dict:
    loader = BatchLoader(reader, split, batch_size, seed)
    indices = loader.indices if max_episodes <= 0 else loader.indices[:max_episodes]
    c = reader.context_len
    full_query = reader.ep_len - c
    tq = full_query if horizon <= 0 else min(horizon, full_query)
    is_doors = reader.kind == "doors"
    has_reward = getattr(model.cfg, "reward_head", False)

    n = 0
    recon_sum = 0.0
    gen_steps = torch.zeros(tq, dtype=torch.float64)
    inf_hits = imag_hits = 0
    door_gen_sum = door_recon_sum = 0.0
    pngs_left = dump_pngs

    for i in range(0, len(indices), batch_size):
        batch_idx = indices[i:i + batch_size]
        frames, actions, rewards = loader.load(batch_idx)
        bsz = frames.shape[0]
        rng = step_rng(seed, i, tag=0xE7A1)
        with torch.no_grad():
            tf = model.teacher_forced(frames, actions, rng, latent_mode="mode",
                                      decode_frames=True)
            dec = tf["decoded"][:, -frames.shape[1] + 1:]  # steps 1..T for either backbone
            target = frames[:, 1:]
            recon_mse = ((dec.clamp(0, 1) - target) * 255.0).pow(2).mean(dim=(1, 2, 3, 4))
            recon_sum += float(recon_mse.sum())
            res = model.imagine(frames[:, :c + 1], actions[:, :c],
                                actions[:, c:c + tq], rng, latent_mode="mode",
                                gt_frames=frames[:, c + 1:c + 1 + tq])
            gen_steps += res.mse_per_step.double() * bsz
            if has_reward:
                inf_pred = tf["reward_logits"][:, -1] > 0
                inf_hits += int((inf_pred == (rewards[:, -1] > 0.5)).sum())
                imag_pred = res.reward_probs[:, -1] > 0.5
                imag_hits += int((imag_pred == (rewards[:, c + tq - 1] > 0.5)).sum())
            if is_doors and tq == full_query:
                for k, ep_index in enumerate(batch_idx):
                    ep = reader.read_episode(ep_index)
                    mask = torch.from_numpy(_final_door_mask(reader, ep))
                    gt_last = frames[k, -1]
                    gen_err = ((res.frames[k, -1].clamp(0, 1) - gt_last) * 255.0).pow(2)
                    rec_err = ((dec[k, -1].clamp(0, 1) - gt_last) * 255.0).pow(2)
                    door_gen_sum += float(gen_err[:, mask].mean())
                    door_recon_sum += float(rec_err[:, mask].mean())
            if out_dir and pngs_left > 0:
                os.makedirs(out_dir, exist_ok=True)
                for k in range(min(pngs_left, bsz)):
                    _dump_png(os.path.join(out_dir, f"imagine_ep{indices[i] + k}.png"),
                              frames[k, c + 1:c + 1 + tq], res.frames[k])
                pngs_left -= min(pngs_left, bsz)
        n += bsz

    out = {
        "split": split,
        "n_episodes": n,
        "horizon": tq,
        "recon_mse": recon_sum / n,
        "gen_mse_per_step": [float(v) / n for v in gen_steps],
    }
    out["gen_mse"] = float(np.mean(out["gen_mse_per_step"]))
    out["gen_mse_final"] = out["gen_mse_per_step"][-1]
    if has_reward:
        out["inference_accuracy"] = inf_hits / n
        out["imagination_accuracy"] = imag_hits / n
    if is_doors and tq == full_query:
        out["door_gen_mse"] = door_gen_sum / n
        out["door_recon_mse"] = door_recon_sum / n
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "eval.json"), "w") as f:
            json.dump(out, f, indent=2)
        with open(os.path.join(out_dir, "gen_mse_per_step.csv"), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "gen_mse"])
            for t, v in enumerate(out["gen_mse_per_step"]):
                w.writerow([t + 1, f"{v:.4f}"])
    return out
