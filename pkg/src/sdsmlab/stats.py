"""Small statistical helpers: per-replica seeding and streaming moments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def replica_rng(seed: int, replica: int) -> np.random.Generator:
    """Independent generator for ``replica`` derived from the global ``seed``.

    The stream is ``SeedSequence(seed, spawn_key=(replica,))``, which is what
    ``SeedSequence(seed).spawn(n)[replica]`` produces.  Results therefore do
    not depend on how replicas are scheduled across workers.
    """
    if seed < 0 or replica < 0:
        raise ValueError("seed and replica index must be nonnegative")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(replica,))))


@dataclass
class RunningMoments:
    """Streaming mean and variance (Chan et al. pairwise combination).

    Works elementwise on arrays of any fixed shape.
    """

    count: int = 0
    mean: np.ndarray | float = 0.0
    m2: np.ndarray | float = 0.0

    def push(self, value) -> None:
        value = np.asarray(value, dtype=float)
        self.count += 1
        delta = value - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (value - self.mean)

    def merge(self, other: RunningMoments) -> RunningMoments:
        if other.count == 0:
            return RunningMoments(self.count, self.mean, self.m2)
        if self.count == 0:
            return RunningMoments(other.count, other.mean, other.m2)
        n = self.count + other.count
        delta = np.asarray(other.mean) - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta**2 * self.count * other.count / n
        return RunningMoments(n, mean, m2)

    @property
    def variance(self):
        if self.count < 2:
            return np.full_like(np.asarray(self.mean, dtype=float), np.nan)
        return self.m2 / (self.count - 1)

    @property
    def se(self):
        return np.sqrt(self.variance / self.count)


@dataclass(frozen=True)
class MeanSE:
    """A Monte-Carlo estimate and its standard error."""

    mean: float
    se: float
    n: int = field(default=0)

    @classmethod
    def of(cls, samples) -> MeanSE:
        x = np.asarray(samples, dtype=float)
        if x.size == 0:
            raise ValueError("no samples")
        se = float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else float("nan")
        return cls(float(x.mean()), se, int(x.size))


def z_score(diff: float, se: float) -> float:
    """``diff / se`` with the conventions 0/0 = 0 and x/0 = inf."""
    if se > 0:
        return float(diff / se)
    return 0.0 if diff == 0 else float("inf")
