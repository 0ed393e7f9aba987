# app/model/noise.py
"""
Explicit random streams for the stochastic parts of the model.

Every Gumbel or Gaussian draw goes through a NoiseSource so that training is
reproducible from a seed, inference is reproducible per request, and gradient
checks can replay exactly the same draws on every evaluation.

Draws flagged `per_sample` have the batch as leading dimension; all others
(the shared hypergraph structure) are batch-free.
"""
import hashlib
from abc import ABC, abstractmethod
from typing import List, Sequence, Tuple

import numpy as np
import torch

UNIFORM_EPS = 1e-20


class NoiseSource(ABC):
    """Uniform(0,1) and standard normal draws of a given shape."""

    @abstractmethod
    def uniform(self, shape: Tuple[int, ...], dtype: torch.dtype, per_sample: bool = False) -> torch.Tensor:
        ...

    @abstractmethod
    def normal(self, shape: Tuple[int, ...], dtype: torch.dtype, per_sample: bool = False) -> torch.Tensor:
        ...


class GeneratorNoise(NoiseSource):
    """One seeded CPU generator for the whole batch."""

    def __init__(self, seed: int):
        self.generator = torch.Generator().manual_seed(int(seed))

    def uniform(self, shape, dtype, per_sample=False):
        return torch.rand(shape, generator=self.generator, dtype=torch.float64).to(dtype)

    def normal(self, shape, dtype, per_sample=False):
        return torch.randn(shape, generator=self.generator, dtype=torch.float64).to(dtype)


class PerInstanceNoise(NoiseSource):
    """
    One generator per batch row, so a sample's draws never depend on its batch mates.

    Shared draws come from a separate stream seeded by the first row's seed.
    """

    def __init__(self, seeds: Sequence[int]):
        self.generators = [torch.Generator().manual_seed(int(s)) for s in seeds]
        self.shared = torch.Generator().manual_seed(int(seeds[0]) if seeds else 0)

    def _draw(self, fn, shape, dtype, per_sample):
        if not per_sample:
            return fn(shape, generator=self.shared, dtype=torch.float64).to(dtype)
        if shape[0] != len(self.generators):
            raise ValueError(f"Batch of {shape[0]} rows but {len(self.generators)} per-sample streams")
        rows = [fn(tuple(shape[1:]), generator=g, dtype=torch.float64) for g in self.generators]
        return torch.stack(rows).to(dtype)

    def uniform(self, shape, dtype, per_sample=False):
        return self._draw(torch.rand, shape, dtype, per_sample)

    def normal(self, shape, dtype, per_sample=False):
        return self._draw(torch.randn, shape, dtype, per_sample)


class ReplayNoise(NoiseSource):
    """
    Records the draws of an inner source, then replays them after `freeze()`.

    Call `rewind()` before each replayed forward pass.
    """

    def __init__(self, inner: NoiseSource):
        self.inner = inner
        self.tape: List[torch.Tensor] = []
        self.frozen = False
        self.cursor = 0

    def freeze(self) -> None:
        self.frozen = True
        self.cursor = 0

    def rewind(self) -> None:
        self.cursor = 0

    def _next(self, kind, shape, dtype, per_sample):
        if not self.frozen:
            draw = getattr(self.inner, kind)(shape, torch.float64, per_sample)
            self.tape.append(draw)
            return draw.to(dtype)
        if self.cursor >= len(self.tape):
            raise RuntimeError("Replay requested more draws than were recorded")
        draw = self.tape[self.cursor]
        self.cursor += 1
        if tuple(draw.shape) != tuple(shape):
            raise RuntimeError(f"Replayed draw has shape {tuple(draw.shape)}, expected {tuple(shape)}")
        return draw.to(dtype)

    def uniform(self, shape, dtype, per_sample=False):
        return self._next("uniform", shape, dtype, per_sample)

    def normal(self, shape, dtype, per_sample=False):
        return self._next("normal", shape, dtype, per_sample)


def content_seed(values: Sequence[float]) -> int:
    """Derives a stable 63-bit seed from the float64 bytes of a series."""
    data = np.ascontiguousarray(np.asarray(values, dtype="<f8")).tobytes()
    return int.from_bytes(hashlib.sha256(data).digest()[:8], "little") & ((1 << 63) - 1)


def gumbel(noise: NoiseSource, shape: Tuple[int, ...], dtype: torch.dtype, per_sample: bool = False) -> torch.Tensor:
    """Standard Gumbel draws g = -log(-log u)."""
    u = noise.uniform(shape, dtype, per_sample)
    return -torch.log(-torch.log(u + UNIFORM_EPS) + UNIFORM_EPS)
