"""Grid-world core: cells, colors, movement and interaction rules.

World logic is integer-only (numpy int arrays, python ints) so episodes
are bit-reproducible across platforms. Headings: 0=up, 1=right, 2=down,
3=left. Actions: 0=forward, 1=turn-left, 2=turn-right, 3=interact.
Forward into a blocking cell is a no-op move; interact picks up a faced
key or unlocks a faced door when a matching-color key is held (the key
is consumed). Entering a terminal cell ends the episode and pays 1 when
the cell's color matches the episode's cue color.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# cell type codes
FLOOR = 0
WALL = 1
CUE = 2          # colored wall cell holding the cue color
DISTRACTOR = 3   # colored wall cell
CANDIDATE = 4    # colored floor cell; entering it terminates the episode
KEY = 5
DOOR_LOCKED = 6
DOOR_UNLOCKED = 7

WALKABLE = (FLOOR, CANDIDATE)

# actions
FORWARD, TURN_LEFT, TURN_RIGHT, INTERACT = 0, 1, 2, 3
N_ACTIONS = 4

# heading -> (dx, dy)
DIRS = ((0, -1), (1, 0), (0, 1), (-1, 0))

# palette index -> rgb; 0 is the agent, 1..2 are reserved for cue and
# candidate squares, 3..8 are the distractor colors.
PALETTE = np.array([
    (255, 60, 60),    # 0 agent red
    (40, 220, 40),    # 1 green (reserved)
    (60, 90, 255),    # 2 blue (reserved)
    (255, 165, 0),    # 3 orange
    (0, 220, 220),    # 4 cyan
    (230, 60, 230),   # 5 magenta
    (250, 250, 50),   # 6 yellow
    (150, 60, 220),   # 7 purple
    (160, 160, 40),   # 8 olive
], dtype=np.uint8)
AGENT_COLOR = 0
RESERVED_COLORS = (1, 2)
DISTRACTOR_COLORS = (3, 4, 5, 6, 7, 8)
KEY_DOOR_COLORS = (1, 2, 3, 4, 5, 6, 7)

WALL_RGB = (96, 96, 96)
FLOOR_RGB = (0, 0, 0)


@dataclass
class GridWorld:
    kind: str                      # "distracting" | "doors"
    param: int                     # hallway width W or number of keys
    cell: np.ndarray               # (H, W) int8 type codes
    color: np.ndarray              # (H, W) int16 palette index, -1 for none
    agent_xy: tuple[int, int]
    heading: int
    seed: int
    cue_color: int = -1
    held: np.ndarray = field(default_factory=lambda: np.zeros(len(PALETTE), dtype=np.int32))
    done: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def height(self) -> int:
        return self.cell.shape[0]

    @property
    def width(self) -> int:
        return self.cell.shape[1]

    def clone(self) -> "GridWorld":
        return GridWorld(
            kind=self.kind, param=self.param,
            cell=self.cell.copy(), color=self.color.copy(),
            agent_xy=self.agent_xy, heading=self.heading, seed=self.seed,
            cue_color=self.cue_color, held=self.held.copy(), done=self.done,
            meta=dict(self.meta),
        )

    def _facing(self) -> tuple[int, int]:
        dx, dy = DIRS[self.heading]
        return self.agent_xy[0] + dx, self.agent_xy[1] + dy

    def _in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def step(self, action: int) -> tuple[float, bool]:
        """Apply one action in place; returns (reward, done)."""
        if self.done:
            raise RuntimeError("episode already terminated")
        if action not in (FORWARD, TURN_LEFT, TURN_RIGHT, INTERACT):
            raise ValueError(f"unknown action {action}")
        reward = 0.0
        if action == TURN_LEFT:
            self.heading = (self.heading - 1) % 4
        elif action == TURN_RIGHT:
            self.heading = (self.heading + 1) % 4
        elif action == FORWARD:
            x, y = self._facing()
            if self._in_bounds(x, y) and self.cell[y, x] in WALKABLE:
                self.agent_xy = (x, y)
                if self.cell[y, x] == CANDIDATE:
                    self.done = True
                    if self.color[y, x] == self.cue_color:
                        reward = 1.0
        else:  # INTERACT
            x, y = self._facing()
            if self._in_bounds(x, y):
                kind = self.cell[y, x]
                col = int(self.color[y, x])
                if kind == KEY:
                    self.held[col] += 1
                    self.cell[y, x] = FLOOR
                    self.color[y, x] = -1
                elif kind == DOOR_LOCKED and self.held[col] > 0:
                    self.cell[y, x] = DOOR_UNLOCKED
                    self.held[col] -= 1
                    reward = 1.0
        return reward, self.done
