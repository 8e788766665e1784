"""Run configuration: flat key=value text files with a desk-scale preset.

Defaults mirror the full-scale 2D training setup; `--desk` swaps in a
laptop-sized preset (smaller widths, 32x32 frames) before the config file
and `--set` overrides apply. Unknown keys are rejected.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from ..worldmodel import WorldModelConfig


class UsageError(Exception):
    """Bad invocation or config (exit code 1)."""


class DataError(Exception):
    """Missing or inconsistent data artifacts (exit code 2)."""


@dataclass
class RunConfig:
    family: str = "s4wm"              # s4wm | s5wm | rssm
    # model
    g_groups: int = 32
    k_classes: int = 32
    d_model: int = 512
    d_ff: int = 2048
    n_blocks: int = 6
    n_state: int = 64
    cnn_layers: int = 3
    cnn_mult: int = 32
    mlp_hidden: int = 512
    gru_hidden: int = 2048
    alpha: float = 0.8
    posterior_mode: str = "factorized"
    no_mlp: bool = False
    reward_head: bool = False
    frame_size: int = 40
    # training
    batch_size: int = 8
    epochs: int = 100
    max_steps: int = 0                # 0: derived from epochs
    lr: float = 0.0                   # 0: family default (1e-3 pssm, 3e-4 rssm)
    lr_decay: str = ""                # "": family default (cosine pssm, constant rssm)
    weight_decay: float = 1e-2
    clip_norm: float = 0.0            # 0: family default (1000 pssm, 200 rssm)
    warmup_steps: int = 1000
    tbtt_k: int = 50
    seed: int = -1                    # -1: PSWM_SEED env var, else 0
    val_every: int = 0                # 0: once per epoch
    val_episodes: int = 64
    # data / evaluation
    dataset: str = ""
    eval_horizon: int = 0             # 0: the full query phase
    eval_episodes: int = 0            # 0: the whole split

    def validate(self) -> None:
        if self.family not in ("s4wm", "s5wm", "rssm"):
            raise UsageError(f"unknown model family '{self.family}'")
        if self.posterior_mode not in ("factorized", "full_history"):
            raise UsageError(f"unknown posterior_mode '{self.posterior_mode}'")
        if self.lr_decay not in ("", "cosine", "constant"):
            raise UsageError(f"unknown lr_decay '{self.lr_decay}'")
        if self.batch_size < 1 or self.epochs < 0:
            raise UsageError("batch_size must be >= 1 and epochs >= 0")

    # family-dependent defaults
    def resolved_lr(self) -> float:
        if self.lr > 0:
            return self.lr
        return 3e-4 if self.family == "rssm" else 1e-3

    def resolved_clip(self) -> float:
        if self.clip_norm > 0:
            return self.clip_norm
        return 200.0 if self.family == "rssm" else 1000.0

    def resolved_decay(self) -> str:
        if self.lr_decay:
            return self.lr_decay
        return "constant" if self.family == "rssm" else "cosine"

    def resolved_seed(self) -> int:
        if self.seed >= 0:
            return self.seed
        env = os.environ.get("PSWM_SEED")
        return int(env) if env else 0

    def wm_config(self, n_actions: int = 4) -> WorldModelConfig:
        return WorldModelConfig(
            g_groups=self.g_groups, k_classes=self.k_classes, d_model=self.d_model,
            d_ff=self.d_ff, n_blocks=self.n_blocks, n_state=self.n_state,
            flavor="diag_mimo" if self.family == "s5wm" else "dplr",
            cnn_layers=self.cnn_layers, cnn_mult=self.cnn_mult,
            mlp_hidden=self.mlp_hidden, alpha=self.alpha,
            posterior_mode=self.posterior_mode, no_mlp=self.no_mlp,
            reward_head=self.reward_head, frame_size=self.frame_size,
            n_actions=n_actions, gru_hidden=self.gru_hidden,
        )

    def to_text(self) -> str:
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"


DESK_PRESET = {
    "d_model": 128, "d_ff": 512, "n_blocks": 4, "g_groups": 16, "k_classes": 16,
    "n_state": 16, "cnn_mult": 16, "mlp_hidden": 256, "gru_hidden": 512,
    "frame_size": 32,
}

_FIELDS = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELDS[key]
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("true", "1", "on", "yes"):
            return True
        if raw.lower() in ("false", "0", "off", "no"):
            return False
        raise UsageError(f"config key '{key}' expects a boolean, got '{raw}'")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def apply_kv(cfg: RunConfig, key: str, raw: str) -> None:
    key = key.strip()
    if key not in _FIELDS:
        raise UsageError(f"unknown config key '{key}'")
    try:
        setattr(cfg, key, _coerce(key, raw))
    except ValueError as e:
        raise UsageError(f"bad value for '{key}': {e}") from e


def parse_config_text(cfg: RunConfig, text: str) -> RunConfig:
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key = value, got '{line}'")
        key, raw = line.split("=", 1)
        apply_kv(cfg, key, raw)
    return cfg


def load_config(path: str | None, desk: bool = False,
                overrides: list[str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if desk:
        for k, v in DESK_PRESET.items():
            setattr(cfg, k, v)
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as e:
            raise DataError(f"cannot read config {path}: {e}") from e
        parse_config_text(cfg, text)
    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got '{item}'")
        key, raw = item.split("=", 1)
        apply_kv(cfg, key, raw)
    cfg.validate()
    return cfg
