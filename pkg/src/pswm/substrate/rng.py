"""Seeded, splittable randomness.

Every source of randomness in the package flows through an `Rng`. An `Rng`
owns a 64-bit state and a split counter; `split(k)` derives k child streams
whose states are a hash of (state, counter..counter+k). The same seed always
reproduces the same tree of streams, independently of how sibling streams
are consumed.
"""

from __future__ import annotations

import torch

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    """One SplitMix64 scramble step (public-domain constants)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


class Rng:
    """Splittable random stream backed by a torch.Generator.

    Args:
        seed: any int; folded into 64 bits.
    """

    def __init__(self, seed: int):
        self.state = _splitmix64(seed & _MASK64)
        self.split_counter = 0
        self._gen: torch.Generator | None = None

    def split(self, k: int) -> list["Rng"]:
        """Derive k independent child streams; advances the split counter."""
        children = []
        for i in range(k):
            child_seed = _splitmix64(self.state ^ _splitmix64(self.split_counter + i))
            children.append(Rng(child_seed))
        self.split_counter += k
        return children

    def child(self, tag: int = 0) -> "Rng":
        """Single derived stream (split of size 1), tagged for readability."""
        return self.split(tag + 1)[tag] if tag else self.split(1)[0]

    @property
    def generator(self) -> torch.Generator:
        gen = self._gen
        if gen is None:
            gen = torch.Generator()
            gen.manual_seed(self.state & ((1 << 63) - 1))
            self._gen = gen
        return gen

    def normal(self, *shape: int, std: float = 1.0, dtype=torch.float32) -> torch.Tensor:
        return torch.randn(shape, generator=self.generator, dtype=dtype) * std

    def uniform(self, *shape: int, lo: float = 0.0, hi: float = 1.0, dtype=torch.float32) -> torch.Tensor:
        u = torch.rand(shape, generator=self.generator, dtype=dtype)
        return u * (hi - lo) + lo

    def integers(self, lo: int, hi: int, shape: tuple[int, ...]) -> torch.Tensor:
        return torch.randint(lo, hi, shape, generator=self.generator)

    def __repr__(self) -> str:  # pragma: no cover
        return f"Rng(state={self.state:#x}, splits={self.split_counter})"
