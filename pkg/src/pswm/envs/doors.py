"""Keys-and-doors reasoning task.

A vertical corridor with n colored keys embedded in the left wall and n
colored doors in the right wall (one door per key color). Interacting
with a faced key picks it up; interacting with a faced locked door
unlocks it when a matching key is held, consuming the key. The agent may
hold several keys at once.

Scripted policy: the context phase walks the corridor end to end and back
without touching anything (every key and door enters the view). The query
phase picks up each key in a seed-random order, attempting to unlock two
seed-random distinct doors after each pickup, and finally attempts every
door once more, so each door's state flips exactly once per episode.
"""

from __future__ import annotations

import numpy as np

from .world import (DOOR_LOCKED, FLOOR, FORWARD, GridWorld, INTERACT, KEY,
                    KEY_DOOR_COLORS, TURN_LEFT, TURN_RIGHT, WALL)

GRID_WIDTH = 7
CORRIDOR_X = 3
KEY_X = 2
DOOR_X = 4
UP, RIGHT, DOWN, LEFT = 0, 1, 2, 3


def slot_row(slot: int) -> int:
    return 2 * (slot + 1)


def start_pose(n_keys: int) -> tuple[int, int, int]:
    """(x, y, heading) where every episode and every skill begins/ends."""
    return CORRIDOR_X, n_keys + 1, UP


def gen_multi_doors_keys(n_keys: int, seed: int) -> GridWorld:
    if not 1 <= n_keys <= len(KEY_DOOR_COLORS):
        raise ValueError(f"n_keys must be in 1..{len(KEY_DOOR_COLORS)}")
    rng = np.random.Generator(np.random.PCG64(seed))
    height = 2 * n_keys + 3
    cell = np.full((height, GRID_WIDTH), WALL, dtype=np.int8)
    color = np.full((height, GRID_WIDTH), -1, dtype=np.int16)
    cell[1:height - 1, CORRIDOR_X] = FLOOR

    colors = list(KEY_DOOR_COLORS[:n_keys])
    key_colors = [colors[i] for i in rng.permutation(n_keys)]
    door_colors = [colors[i] for i in rng.permutation(n_keys)]
    for slot in range(n_keys):
        cell[slot_row(slot), KEY_X] = KEY
        color[slot_row(slot), KEY_X] = key_colors[slot]
        cell[slot_row(slot), DOOR_X] = DOOR_LOCKED
        color[slot_row(slot), DOOR_X] = door_colors[slot]

    key_order = [int(i) for i in rng.permutation(n_keys)]
    attempts = [sorted(int(j) for j in rng.choice(n_keys, size=min(2, n_keys), replace=False))
                for _ in range(n_keys)]
    final_order = [int(i) for i in rng.permutation(n_keys)]
    x, y, heading = start_pose(n_keys)
    return GridWorld(
        kind="doors", param=n_keys, cell=cell, color=color,
        agent_xy=(x, y), heading=heading, seed=seed,
        meta={"key_order": key_order, "attempts": attempts, "final_order": final_order,
              "key_colors": key_colors, "door_colors": door_colors},
    )


def _turns(heading: int, target: int) -> list[int]:
    delta = (target - heading) % 4
    return {0: [], 1: [TURN_RIGHT], 2: [TURN_RIGHT, TURN_RIGHT], 3: [TURN_LEFT]}[delta]


def _leg(y: int, heading: int, target_row: int, side: int) -> tuple[list[int], int, int]:
    """Move along the corridor to target_row, face `side`, interact."""
    actions: list[int] = []
    dy = target_row - y
    if dy != 0:
        vert = DOWN if dy > 0 else UP
        actions += _turns(heading, vert)
        actions += [FORWARD] * abs(dy)
        heading = vert
    actions += _turns(heading, side)
    actions.append(INTERACT)
    return actions, target_row, side


def scripted_actions(world: GridWorld) -> tuple[list[int], list[int]]:
    """(context actions, query actions) of the data-collecting policy."""
    n = world.param
    _, y0, h0 = start_pose(n)
    top, bottom = 1, 2 * n + 1
    context = (
        [FORWARD] * (y0 - top)
        + [TURN_RIGHT, TURN_RIGHT]
        + [FORWARD] * (bottom - top)
        + [TURN_LEFT, TURN_LEFT]
        + [FORWARD] * (bottom - y0)
    )
    query: list[int] = []
    y, heading = y0, h0
    for k in world.meta["key_order"]:
        acts, y, heading = _leg(y, heading, slot_row(k), LEFT)
        query += acts
        for d in world.meta["attempts"][k]:
            acts, y, heading = _leg(y, heading, slot_row(d), RIGHT)
            query += acts
    for d in world.meta["final_order"]:
        acts, y, heading = _leg(y, heading, slot_row(d), RIGHT)
        query += acts
    return context, query


def skill_action_sequence(n_keys: int, skill: tuple[str, int]) -> list[int]:
    """Action sequence for one skill, start pose to start pose.

    Skills: ("pick_key", slot) or ("open_door", slot). The agent walks to
    the slot row, faces the object, interacts, and returns to the start
    pose facing up.
    """
    kind, slot = skill
    side = LEFT if kind == "pick_key" else RIGHT if kind == "open_door" else None
    if side is None:
        raise ValueError(f"unknown skill {kind}")
    x0, y0, h0 = start_pose(n_keys)
    actions, y, heading = _leg(y0, h0, slot_row(slot), side)
    dy = y0 - y
    if dy != 0:
        vert = DOWN if dy > 0 else UP
        actions += _turns(heading, vert)
        actions += [FORWARD] * abs(dy)
        heading = vert
    actions += _turns(heading, h0)
    return actions
