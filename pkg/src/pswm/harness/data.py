"""Batch assembly from dataset files: deterministic, resumable ordering."""

from __future__ import annotations

import numpy as np
import torch

from ..envs.dataset import DatasetReader


def episode_to_tensors(ep) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    frames = torch.from_numpy(ep.frames).float().div_(255.0).permute(0, 3, 1, 2)
    actions = torch.from_numpy(ep.actions.astype(np.int64))
    rewards = torch.from_numpy(ep.rewards)
    return frames, actions, rewards


class BatchLoader:
    """Yields (frames, actions, rewards) batches in a seed-derived order.

    The batch served at global step k is a pure function of (seed, k), so
    resumed runs replay the identical data order.
    """

    def __init__(self, reader: DatasetReader, split: str, batch_size: int, seed: int):
        self.reader = reader
        self.indices = list(reader.split_indices(split))
        if not self.indices:
            raise ValueError(f"split '{split}' is empty")
        self.batch_size = batch_size
        self.seed = seed

    @property
    def steps_per_epoch(self) -> int:
        return max(1, len(self.indices) // self.batch_size)

    def batch_episode_indices(self, step: int) -> list[int]:
        epoch, pos = divmod(step, self.steps_per_epoch)
        rng = np.random.Generator(np.random.PCG64(hash((self.seed, epoch)) & (2**63 - 1)))
        perm = rng.permutation(len(self.indices))
        chosen = perm[(pos * self.batch_size) % len(self.indices):][:self.batch_size]
        if len(chosen) < self.batch_size:  # wrap the tail
            chosen = np.concatenate([chosen, perm[:self.batch_size - len(chosen)]])
        return [self.indices[i] for i in chosen]

    def load(self, episode_indices) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        frames, actions, rewards = [], [], []
        for i in episode_indices:
            f, a, r = episode_to_tensors(self.reader.read_episode(i))
            frames.append(f)
            actions.append(a)
            rewards.append(r)
        return torch.stack(frames), torch.stack(actions), torch.stack(rewards)

    def batch(self, step: int):
        return self.load(self.batch_episode_indices(step))
