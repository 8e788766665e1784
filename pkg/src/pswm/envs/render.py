"""Egocentric frame rendering.

The observation is a 7x7-cell crop centered on the agent (view radius 3),
drawn at tile size frame_size // 7 with the remainder as a black margin:
partial observability comes from the crop, the agent always occupies the
center tile. Rendering is pure integer lookup, no floating point.
"""

from __future__ import annotations

import numpy as np

from .world import (AGENT_COLOR, CANDIDATE, CUE, DISTRACTOR, DOOR_LOCKED,
                    DOOR_UNLOCKED, FLOOR, FLOOR_RGB, GridWorld, KEY, PALETTE,
                    WALL, WALL_RGB)

VIEW_RADIUS = 3
VIEW_CELLS = 2 * VIEW_RADIUS + 1


def _draw_cell(tile: np.ndarray, kind: int, col: int) -> None:
    ts = tile.shape[0]
    inner = slice(ts // 4, ts - ts // 4)
    if kind == WALL:
        tile[:] = WALL_RGB
    elif kind in (CUE, DISTRACTOR, CANDIDATE):
        tile[:] = PALETTE[col]
    elif kind == KEY:
        tile[:] = FLOOR_RGB
        tile[inner, inner] = PALETTE[col]
    elif kind == DOOR_LOCKED:
        tile[:] = PALETTE[col]
    elif kind == DOOR_UNLOCKED:
        tile[:] = PALETTE[col]
        tile[inner, inner] = FLOOR_RGB
    else:
        tile[:] = FLOOR_RGB


def _draw_agent(tile: np.ndarray, heading: int) -> None:
    ts = tile.shape[0]
    tile[:] = PALETTE[AGENT_COLOR]
    m = max(1, ts // 4)
    mid = slice((ts - m) // 2, (ts - m) // 2 + m)
    if heading == 0:
        tile[0:m, mid] = (255, 255, 255)
    elif heading == 1:
        tile[mid, ts - m:ts] = (255, 255, 255)
    elif heading == 2:
        tile[ts - m:ts, mid] = (255, 255, 255)
    else:
        tile[mid, 0:m] = (255, 255, 255)


def render(world: GridWorld, frame_size: int = 40) -> np.ndarray:
    """Render the egocentric observation as (frame_size, frame_size, 3) u8."""
    ts = frame_size // VIEW_CELLS
    if ts < 2:
        raise ValueError(f"frame size {frame_size} too small for a {VIEW_CELLS}-cell view")
    margin = (frame_size - ts * VIEW_CELLS) // 2
    frame = np.zeros((frame_size, frame_size, 3), dtype=np.uint8)
    ax, ay = world.agent_xy
    for vy in range(VIEW_CELLS):
        for vx in range(VIEW_CELLS):
            gx = ax + vx - VIEW_RADIUS
            gy = ay + vy - VIEW_RADIUS
            y0 = margin + vy * ts
            x0 = margin + vx * ts
            tile = frame[y0:y0 + ts, x0:x0 + ts]
            if not (0 <= gx < world.width and 0 <= gy < world.height):
                continue  # out of bounds renders black
            _draw_cell(tile, int(world.cell[gy, gx]), int(world.color[gy, gx]))
            if (gx, gy) == (ax, ay):
                _draw_agent(tile, world.heading)
    return frame


def cell_pixel_mask(world: GridWorld, frame_size: int, kinds: tuple[int, ...]) -> np.ndarray:
    """Boolean (frame_size, frame_size) mask of pixels showing the given cell kinds."""
    ts = frame_size // VIEW_CELLS
    margin = (frame_size - ts * VIEW_CELLS) // 2
    mask = np.zeros((frame_size, frame_size), dtype=bool)
    ax, ay = world.agent_xy
    for vy in range(VIEW_CELLS):
        for vx in range(VIEW_CELLS):
            gx = ax + vx - VIEW_RADIUS
            gy = ay + vy - VIEW_RADIUS
            if 0 <= gx < world.width and 0 <= gy < world.height \
                    and int(world.cell[gy, gx]) in kinds:
                y0 = margin + vy * ts
                x0 = margin + vx * ts
                mask[y0:y0 + ts, x0:x0 + ts] = True
    return mask


def visible_cells(world: GridWorld) -> set[tuple[int, int]]:
    """Grid coordinates covered by the current crop (coverage accounting)."""
    ax, ay = world.agent_xy
    out = set()
    for gy in range(ay - VIEW_RADIUS, ay + VIEW_RADIUS + 1):
        for gx in range(ax - VIEW_RADIUS, ax + VIEW_RADIUS + 1):
            if 0 <= gx < world.width and 0 <= gy < world.height:
                out.add((gx, gy))
    return out
