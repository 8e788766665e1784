"""Episode generation and the on-disk dataset format.

A dataset file holds every split (train/val/test) of one environment
configuration, all episodes padded to a common length T. Little-endian
layout:

    magic    7 bytes "PSWM-DS"
    version  u32
    env kind u8 (0 = distracting hallway, 1 = keys and doors)
    param    u32 (hallway width / number of keys)
    frame    u32, context_len u32, ep_len u32 (T)
    counts   u32 x 3 (train, val, test)
    compress u8 (0 raw, 1 zlib per episode)
    base_seed u64
    offsets  u64 x total (absolute file offset of each episode record)
    records: seed u64, frames_nbytes u32, frames blob
             (u8, (T+1, frame, frame, 3)), actions u8 x T, rewards f32 x T

Episode seeds are contiguous from base_seed; splits are contiguous index
ranges in (train, val, test) order. Hallway episodes alternate the
reward outcome by episode index so every split is exactly class-balanced.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import distracting, doors
from .render import render
from .world import GridWorld, INTERACT

MAGIC = b"PSWM-DS"
VERSION = 1
KIND_CODE = {"distracting": 0, "doors": 1}
CODE_KIND = {v: k for k, v in KIND_CODE.items()}


@dataclass
class Episode:
    frames: np.ndarray       # (T+1, fs, fs, 3) u8
    actions: np.ndarray      # (T,) u8
    rewards: np.ndarray      # (T,) f32
    context_len: int
    seed: int

    @property
    def length(self) -> int:
        return len(self.actions)


def make_world(kind: str, param: int, seed: int, reward_bit: int | None = None) -> GridWorld:
    if kind == "distracting":
        return distracting.gen_distracting_memory(param, seed, reward_bit)
    if kind == "doors":
        return doors.gen_multi_doors_keys(param, seed)
    raise ValueError(f"unknown env kind '{kind}'")


def scripted_actions(world: GridWorld) -> tuple[list[int], list[int]]:
    if world.kind == "distracting":
        return distracting.scripted_actions(world)
    return doors.scripted_actions(world)


def generate_episode(kind: str, param: int, seed: int, frame_size: int,
                     reward_bit: int | None = None, pad_to: int | None = None) -> Episode:
    """Roll the scripted policy through a fresh world and record everything.

    pad_to extends the action log with no-op interactions to a fixed
    length (used so all episodes in a dataset share one T).
    """
    world = make_world(kind, param, seed, reward_bit)
    context, query = scripted_actions(world)
    actions = context + query
    if pad_to is not None:
        if pad_to < len(actions):
            raise ValueError(f"pad_to {pad_to} is shorter than the episode ({len(actions)})")
        actions = actions + [INTERACT] * (pad_to - len(actions))
    frames = [render(world, frame_size)]
    rewards = []
    for action in actions:
        r, _ = world.step(action)
        frames.append(render(world, frame_size))
        rewards.append(r)
    return Episode(
        frames=np.stack(frames),
        actions=np.array(actions, dtype=np.uint8),
        rewards=np.array(rewards, dtype=np.float32),
        context_len=len(context),
        seed=seed,
    )


def _episode_raw_length(kind: str, param: int, seed: int) -> int:
    if kind == "distracting":
        c, q = distracting.episode_lengths(param)
        return c + q
    world = make_world(kind, param, seed)
    context, query = scripted_actions(world)
    return len(context) + len(query)


def build_dataset(kind: str, param: int, counts: tuple[int, int, int], seed: int,
                  out_path: str, frame_size: int = 40, compress: bool = True) -> None:
    """Generate counts=(train, val, test) episodes and write one file."""
    total = sum(counts)
    if total < 1:
        raise ValueError("dataset needs at least one episode")
    seeds = [seed + i for i in range(total)]
    ep_len = max(_episode_raw_length(kind, param, s) for s in seeds)
    if kind == "distracting":
        context_len = distracting.episode_lengths(param)[0]
    else:
        context_len = 4 * param + 4

    header_fixed = struct.pack(
        "<7sIBIIIIIIIBQ", MAGIC, VERSION, KIND_CODE[kind], param, frame_size,
        context_len, ep_len, counts[0], counts[1], counts[2],
        1 if compress else 0, seed & ((1 << 64) - 1),
    )
    offset_table_pos = len(header_fixed)
    offsets = [0] * total
    try:
        f = open(out_path, "wb")
    except OSError as e:
        raise OSError(f"cannot open dataset file {out_path}: {e}") from e
    with f:
        f.write(header_fixed)
        f.write(b"\x00" * 8 * total)  # placeholder offset table
        for i, ep_seed in enumerate(seeds):
            reward_bit = (i % 2) if kind == "distracting" else None
            try:
                ep = generate_episode(kind, param, ep_seed, frame_size,
                                      reward_bit=reward_bit, pad_to=ep_len)
            except Exception as e:
                raise RuntimeError(f"episode {i} (seed {ep_seed}) failed: {e}") from e
            offsets[i] = f.tell()
            blob = ep.frames.tobytes(order="C")
            if compress:
                blob = zlib.compress(blob, level=6)
            f.write(struct.pack("<QI", ep_seed & ((1 << 64) - 1), len(blob)))
            f.write(blob)
            f.write(ep.actions.tobytes(order="C"))
            f.write(ep.rewards.astype("<f4").tobytes(order="C"))
        f.seek(offset_table_pos)
        for off in offsets:
            f.write(struct.pack("<Q", off))


class DatasetReader:
    """Random access to episodes of a dataset file."""

    SPLITS = ("train", "val", "test")

    def __init__(self, path: str):
        self.path = path
        with open(path, "rb") as f:
            head = f.read(struct.calcsize("<7sIBIIIIIIIBQ"))
            (magic, version, kind_code, self.param, self.frame_size,
             self.context_len, self.ep_len, n_train, n_val, n_test,
             compress, self.base_seed) = struct.unpack("<7sIBIIIIIIIBQ", head)
            if magic != MAGIC:
                raise ValueError(f"{path}: bad dataset magic {magic!r}")
            if version != VERSION:
                raise ValueError(f"{path}: unsupported dataset version {version}")
            self.kind = CODE_KIND[kind_code]
            self.counts = {"train": n_train, "val": n_val, "test": n_test}
            self.compress = bool(compress)
            total = n_train + n_val + n_test
            raw = f.read(8 * total)
            self.offsets = list(struct.unpack(f"<{total}Q", raw))
            if any(b >= a for a, b in zip(self.offsets[1:], self.offsets[:-1])):
                raise ValueError(f"{path}: offset table is not strictly increasing")

    @property
    def n_episodes(self) -> int:
        return len(self.offsets)

    def split_indices(self, split: str) -> range:
        if split not in self.SPLITS:
            raise ValueError(f"unknown split '{split}'")
        start = 0
        for s in self.SPLITS:
            if s == split:
                return range(start, start + self.counts[s])
            start += self.counts[s]
        raise AssertionError

    def read_episode(self, index: int) -> Episode:
        if not 0 <= index < self.n_episodes:
            raise IndexError(f"episode index {index} out of range")
        t = self.ep_len
        fs = self.frame_size
        with open(self.path, "rb") as f:
            f.seek(self.offsets[index])
            seed, nbytes = struct.unpack("<QI", f.read(12))
            blob = f.read(nbytes)
            if self.compress:
                blob = zlib.decompress(blob)
            frames = np.frombuffer(blob, dtype=np.uint8).reshape(t + 1, fs, fs, 3)
            actions = np.frombuffer(f.read(t), dtype=np.uint8)
            rewards = np.frombuffer(f.read(4 * t), dtype="<f4").astype(np.float32)
        return Episode(frames=frames.copy(), actions=actions.copy(), rewards=rewards,
                       context_len=self.context_len, seed=seed)
