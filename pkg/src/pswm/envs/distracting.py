"""Distracting-hallway memory task.

A hallway of configurable width with a colored cue square embedded in the
left wall and two colored candidate squares at the right end, one above
and one below the corridor. Colored distractor cells of random colors
line the hallway walls. Exactly one candidate shares the cue's color;
entering any candidate ends the episode, paying 1 on a color match.

The scripted policy's context phase turns off its initial heading, walks
to the cue, traverses the whole hallway and returns to the start
(2W - 1 actions); the query phase walks to one candidate chosen from the
episode seed (W/2 + 1 actions).
"""

from __future__ import annotations

import numpy as np

from .world import (CANDIDATE, CUE, DISTRACTOR, DISTRACTOR_COLORS, FLOOR,
                    FORWARD, GridWorld, INTERACT, RESERVED_COLORS, TURN_LEFT,
                    TURN_RIGHT, WALL)

HALL_ROW = 3
GRID_HEIGHT = 7
DISTRACTOR_DENSITY = 0.6


def start_x(width: int) -> int:
    return width // 2 + 1


def episode_lengths(width: int) -> tuple[int, int]:
    """(context actions, query actions) for a hallway of the given width."""
    return 2 * width - 1, width // 2 + 1


def gen_distracting_memory(width: int, seed: int, reward_bit: int | None = None) -> GridWorld:
    """Build one episode's world.

    reward_bit, when given, pins whether the seed-chosen query square will
    be the matching one (1) or not (0); None leaves it to the seed. Either
    way the layout is a pure function of (width, seed, reward_bit).
    """
    if width < 6 or width % 2 != 0:
        raise ValueError("hallway width must be even and >= 6")
    rng = np.random.Generator(np.random.PCG64(seed))
    cell = np.full((GRID_HEIGHT, width), WALL, dtype=np.int8)
    color = np.full((GRID_HEIGHT, width), -1, dtype=np.int16)
    cell[HALL_ROW, 1:width - 1] = FLOOR

    query_side = int(rng.integers(0, 2))          # 0 = upper square, 1 = lower
    if reward_bit is None:
        match_side = int(rng.integers(0, 2))
    else:
        match_side = query_side if reward_bit else 1 - query_side
    color_order = rng.permutation(2)              # reserved colors onto (up, down)
    cand_rows = (HALL_ROW - 1, HALL_ROW + 1)
    cand_x = width - 2
    for side, row in enumerate(cand_rows):
        cell[row, cand_x] = CANDIDATE
        color[row, cand_x] = RESERVED_COLORS[color_order[side]]
    cue_color = int(color[cand_rows[match_side], cand_x])
    cell[HALL_ROW, 0] = CUE
    color[HALL_ROW, 0] = cue_color

    for x in range(2, width - 3):
        for row in cand_rows:
            if rng.random() < DISTRACTOR_DENSITY:
                cell[row, x] = DISTRACTOR
                color[row, x] = DISTRACTOR_COLORS[int(rng.integers(0, len(DISTRACTOR_COLORS)))]

    return GridWorld(
        kind="distracting", param=width, cell=cell, color=color,
        agent_xy=(start_x(width), HALL_ROW), heading=0, seed=seed,
        cue_color=cue_color, meta={"query_side": query_side, "match_side": match_side},
    )


def scripted_actions(world: GridWorld) -> tuple[list[int], list[int]]:
    """(context actions, query actions) of the data-collecting policy."""
    w = world.param
    xs = start_x(w)
    context = (
        [TURN_LEFT]
        + [FORWARD] * (xs - 1)
        + [TURN_RIGHT, TURN_RIGHT]
        + [FORWARD] * (w - 3)
        + [TURN_LEFT, TURN_LEFT]
        + [FORWARD] * (w - 2 - xs)
    )
    into_square = TURN_LEFT if world.meta["query_side"] == 0 else TURN_RIGHT
    query = (
        [TURN_RIGHT, TURN_RIGHT]
        + [FORWARD] * (w - 2 - xs)
        + [into_square, FORWARD]
    )
    assert (len(context), len(query)) == episode_lengths(w)
    return context, query
