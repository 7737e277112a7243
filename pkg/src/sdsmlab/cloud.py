"""Weighted particle clouds (the discrete measure ``mu_t``)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ParticleCloud:
    """Positions ``(N, d)``, positive masses ``(N,)`` and a time stamp."""

    positions: np.ndarray
    masses: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        mass = np.asarray(self.masses, dtype=float)
        if pos.ndim != 2:
            raise ValueError("positions must be an (N, d) array")
        if mass.shape != (pos.shape[0],):
            raise ValueError("positions and masses must have equal length")
        if np.any(mass <= 0):
            raise ValueError("particle masses must be positive")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "masses", mass)

    @property
    def dimension(self) -> int:
        return self.positions.shape[1]

    @property
    def alive(self) -> int:
        return self.positions.shape[0]

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    @property
    def extinct(self) -> bool:
        return self.alive == 0

    @classmethod
    def empty(cls, d: int, time: float = 0.0) -> ParticleCloud:
        return cls(np.zeros((0, d)), np.zeros(0), time)

    def pair(self, f) -> float:
        """Empirical pairing ``sum_i m_i f(x_i)``; ``f`` maps ``(N, d)`` to ``(N,)``."""
        if self.alive == 0:
            return 0.0
        return float(np.dot(self.masses, np.asarray(f(self.positions), dtype=float)))
