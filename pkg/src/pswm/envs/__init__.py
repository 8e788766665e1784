"""Deterministic 2D memory environments and the episode dataset pipeline."""

from .dataset import DatasetReader, Episode, build_dataset, generate_episode, make_world
from .distracting import gen_distracting_memory
from .doors import gen_multi_doors_keys, skill_action_sequence
from .render import cell_pixel_mask, render, visible_cells
from .world import GridWorld, N_ACTIONS

__all__ = [
    "DatasetReader", "Episode", "build_dataset", "generate_episode", "make_world",
    "gen_distracting_memory", "gen_multi_doors_keys", "skill_action_sequence",
    "cell_pixel_mask", "render", "visible_cells", "GridWorld", "N_ACTIONS",
]
