"""Named parameter storage with optimizer moments.

A ParamStore maps hierarchical names ("blocks.0.ssm1.c_re") to leaf
tensors. Trainable leaves carry requires_grad; fixed buffers (e.g. frozen
SSM input matrices) live alongside but are skipped by the optimizer.
AdamW first/second moments are allocated lazily, zero-initialized, one
pair per trainable parameter, plus a shared step counter.
"""

from __future__ import annotations

import torch


class ParamStore:
    def __init__(self):
        self.params: dict[str, torch.Tensor] = {}
        self.buffers: dict[str, torch.Tensor] = {}
        self.m: dict[str, torch.Tensor] = {}
        self.v: dict[str, torch.Tensor] = {}
        self.step = 0

    def add(self, name: str, value: torch.Tensor, trainable: bool = True) -> torch.Tensor:
        if name in self.params or name in self.buffers:
            raise KeyError(f"parameter '{name}' already owned")
        value = value.detach().clone()
        if trainable:
            value.requires_grad_(True)
            self.params[name] = value
        else:
            self.buffers[name] = value
        return value

    def __getitem__(self, name: str) -> torch.Tensor:
        if name in self.params:
            return self.params[name]
        return self.buffers[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params or name in self.buffers

    def names(self) -> list[str]:
        return sorted(self.params.keys())

    def ensure_moments(self) -> None:
        for name, p in self.params.items():
            if name not in self.m:
                self.m[name] = torch.zeros_like(p, requires_grad=False)
                self.v[name] = torch.zeros_like(p, requires_grad=False)

    def n_values(self) -> int:
        return sum(p.numel() for p in self.params.values())

    def load_values(self, values: dict[str, torch.Tensor]) -> None:
        """Overwrite parameter/buffer/moment data in place (checkpoint load)."""
        for name, val in values.items():
            if name.endswith(".m") and name[:-2] in self.params:
                self.ensure_moments()
                self.m[name[:-2]].copy_(val)
            elif name.endswith(".v") and name[:-2] in self.params:
                self.ensure_moments()
                self.v[name[:-2]].copy_(val)
            elif name in self.params:
                with torch.no_grad():
                    self.params[name].copy_(val)
            elif name in self.buffers:
                self.buffers[name].copy_(val)
            elif name == "optim.step":
                self.step = int(val.item())
            else:
                raise KeyError(f"checkpoint contains unknown parameter '{name}'")
