"""Skill-level model-predictive control on the keys-and-doors task.

The task: unlock the door shown (unlocked) in a goal image. Two skills
are allowed: pick up a key at a slot, then go to a door slot and attempt
to unlock it; every skill starts and ends at the fixed start pose. The
planner enumerates all skill sequences of length two, imagines each with
the world model, scores the final imagined frame against the goal image
by pixel MSE, executes the first skill of the best sequence in the real
environment, then replans the remaining door choice the same way.
"""

from __future__ import annotations

import numpy as np
import torch

from ..envs.dataset import scripted_actions
from ..envs.doors import DOOR_X, gen_multi_doors_keys, skill_action_sequence
from ..envs.render import render
from ..envs.world import DOOR_UNLOCKED, GridWorld
from ..substrate import Rng


def _frame_tensor(frame: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(frame).float().div_(255.0).permute(2, 0, 1)


class OracleImaginer:
    """The environment itself as a perfect world model (planner isolation)."""

    def __init__(self, world: GridWorld, frame_size: int):
        self.world = world
        self.frame_size = frame_size

    def rollout_frames(self, query_actions: list[int]) -> torch.Tensor:
        w = self.world.clone()
        frames = []
        for a in query_actions:
            w.step(int(a))
            frames.append(_frame_tensor(render(w, self.frame_size)))
        return torch.stack(frames).unsqueeze(0)


class ModelImaginer:
    """Wraps a trained world model plus the interaction history so far."""

    def __init__(self, model, frame_size: int, seed: int = 0):
        self.model = model
        self.frame_size = frame_size
        self.frames: list[torch.Tensor] = []
        self.actions: list[int] = []
        self.seed = seed

    def observe(self, frame: np.ndarray, action: int | None) -> None:
        if action is not None:
            self.actions.append(int(action))
        self.frames.append(_frame_tensor(frame))

    def rollout_frames(self, query_actions: list[int]) -> torch.Tensor:
        ctx_frames = torch.stack(self.frames).unsqueeze(0)
        ctx_actions = torch.tensor([self.actions], dtype=torch.int64)
        query = torch.tensor([query_actions], dtype=torch.int64)
        res = self.model.imagine(ctx_frames, ctx_actions, query, Rng(self.seed),
                                 latent_mode="mode")
        return res.frames


def _score(frames: torch.Tensor, goal: torch.Tensor) -> float:
    return float(((frames[0, -1].clamp(0, 1) - goal) * 255.0).pow(2).mean())


def make_goal_image(world: GridWorld, target_door: int, frame_size: int) -> np.ndarray:
    """Goal = the start-pose view after the target door has been unlocked."""
    n = world.param
    key_slot = world.meta["key_colors"].index(world.meta["door_colors"][target_door])
    w = world.clone()
    for skill in (("pick_key", key_slot), ("open_door", target_door)):
        for a in skill_action_sequence(n, skill):
            w.step(int(a))
    if w.cell[2 * (target_door + 1), DOOR_X] != DOOR_UNLOCKED:
        raise AssertionError("goal construction failed to unlock the target door")
    return render(w, frame_size)


def run_task(world: GridWorld, target_door: int, frame_size: int,
             model=None, seed: int = 0) -> dict:
    """One MPC episode; model=None plans with the oracle world model."""
    n = world.param
    goal = _frame_tensor(make_goal_image(world, target_door, frame_size))
    real = world.clone()
    imaginer = ModelImaginer(model, frame_size, seed) if model is not None else None
    if imaginer is not None:
        # context phase: the scripted tour reveals the world to the model
        context, _ = scripted_actions(real)
        imaginer.observe(render(real, frame_size), None)
        for a in context:
            real.step(a)
            imaginer.observe(render(real, frame_size), a)

    def rollout(actions: list[int]) -> torch.Tensor:
        if imaginer is not None:
            return imaginer.rollout_frames(actions)
        return OracleImaginer(real, frame_size).rollout_frames(actions)

    # stage 1: choose over all (key, door) sequences, execute the key skill
    candidates = [(k, d) for k in range(n) for d in range(n)]
    scores = []
    for k, d in candidates:
        acts = skill_action_sequence(n, ("pick_key", k)) + \
            skill_action_sequence(n, ("open_door", d))
        scores.append(_score(rollout(acts), goal))
    best_k = candidates[int(np.argmin(scores))][0]
    for a in skill_action_sequence(n, ("pick_key", best_k)):
        real.step(a)
        if imaginer is not None:
            imaginer.observe(render(real, frame_size), a)

    # stage 2: replan the door skill
    door_scores = []
    for d in range(n):
        acts = skill_action_sequence(n, ("open_door", d))
        door_scores.append(_score(rollout(acts), goal))
    best_d = int(np.argmin(door_scores))
    for a in skill_action_sequence(n, ("open_door", best_d)):
        real.step(a)

    success = real.cell[2 * (target_door + 1), DOOR_X] == DOOR_UNLOCKED
    return {"success": bool(success), "picked_key": best_k, "opened_door": best_d,
            "target_door": target_door, "n_candidates": len(candidates)}


def run_mpc(n_keys: int, n_tasks: int, seed: int, frame_size: int,
            model=None) -> dict:
    rng = np.random.Generator(np.random.PCG64(seed))
    results = []
    for i in range(n_tasks):
        world = gen_multi_doors_keys(n_keys, int(rng.integers(0, 2**31)))
        target = int(rng.integers(0, n_keys))
        results.append(run_task(world, target, frame_size, model=model, seed=seed + i))
    return {
        "n_tasks": n_tasks,
        "success_rate": sum(r["success"] for r in results) / n_tasks,
        "tasks": results,
    }
