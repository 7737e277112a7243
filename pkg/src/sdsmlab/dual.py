"""Exact function-valued dual process on Gaussian-product functions.

A state represents ``f(y_1..y_J) = exp(log_prefactor) * prod_k phi_{s_k}(y_k - c_k)``.
Between jumps the heat semigroup adds elapsed time to every bandwidth; a jump
identifies two coordinates, which multiplies two Gaussians in the same
variable and is again a (scaled) Gaussian.  Only the standard kernel
(``h = 0``, ``c = I``) acts this way on Gaussians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError
from .kernels import gaussian_density, merge_gaussians
from .measures import GaussianField, MeasureSpec, pair
from .stats import MeanSE, RunningMoments, replica_rng, z_score


@dataclass(frozen=True)
class DualState:
    """Gaussian-product function with ``J`` coordinates."""

    bandwidths: np.ndarray
    centers: np.ndarray
    log_prefactor: float = 0.0
    jump_times: tuple = ()
    elapsed: float = 0.0

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.bandwidths, dtype=float))
        c = np.asarray(self.centers, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        if c.shape[0] != b.shape[0] or b.shape[0] < 1:
            raise DomainError("need one center per bandwidth and J >= 1")
        if np.any(b <= 0):
            raise DomainError("bandwidths must be positive")
        object.__setattr__(self, "bandwidths", b)
        object.__setattr__(self, "centers", c)

    @classmethod
    def product(cls, bandwidths: Sequence[float], centers) -> DualState:
        return cls(np.asarray(bandwidths, dtype=float), np.asarray(centers, dtype=float))

    @property
    def J(self) -> int:
        return int(self.bandwidths.shape[0])

    @property
    def dimension(self) -> int:
        return int(self.centers.shape[1])

    @property
    def factors(self) -> list[tuple[float, np.ndarray]]:
        return [(float(s), c) for s, c in zip(self.bandwidths, self.centers)]

    def __call__(self, y) -> np.ndarray:
        """Evaluate at points ``y`` of shape ``(..., J, d)``."""
        y = np.asarray(y, dtype=float)
        dens = np.asarray(gaussian_density(self.bandwidths, y - self.centers))
        return math.exp(self.log_prefactor) * np.prod(dens, axis=-1)

    def log_value(self, y) -> np.ndarray:
        """Logarithm of the represented function at ``y`` of shape ``(..., J, d)``."""
        y = np.asarray(y, dtype=float)
        diff = y - self.centers
        r2 = np.einsum("...i,...i->...", diff, diff)
        d = self.dimension
        logs = -0.5 * d * np.log(2.0 * math.pi * self.bandwidths) - r2 / (2.0 * self.bandwidths)
        return self.log_prefactor + np.sum(logs, axis=-1)

    def pair_product(self, mu: MeasureSpec) -> float:
        """``<f, mu^J>`` for a product measure (factorizes over coordinates)."""
        total = math.exp(self.log_prefactor)
        for s, c in self.factors:
            total *= pair(mu, GaussianField(c, s)).value
        return total


def evolve(state: DualState, dt: float) -> DualState:
    """Heat flow on every factor: bandwidths grow by ``dt``."""
    if dt < 0:
        raise DomainError("dt must be nonnegative")
    if dt == 0:
        return state
    return replace(state, bandwidths=state.bandwidths + dt, elapsed=state.elapsed + dt)


def apply_jump(state: DualState, i: int, j: int, time: float | None = None) -> DualState:
    """Identify coordinate ``j`` with ``i``: ``f(..y_i..y_j..) -> f(..y_i..y_i..)``.

    The two factors in ``y_i`` merge into one Gaussian; the merge scale
    ``phi_{u+v}(c_i - c_j)`` is folded into the log-prefactor.  Coordinate
    ``j`` is removed, so later indices shift down by one.
    """
    J = state.J
    if J < 2:
        raise DomainError("no jump possible with a single coordinate")
    if i == j or not (0 <= i < J and 0 <= j < J):
        raise DomainError(f"invalid coordinate pair ({i}, {j}) for J={J}")
    u, v = float(state.bandwidths[i]), float(state.bandwidths[j])
    z, center, log_scale = merge_gaussians(u, state.centers[i], v, state.centers[j])
    b = state.bandwidths.copy()
    c = state.centers.copy()
    b[i] = z
    c[i] = center
    keep = np.arange(J) != j
    t = state.elapsed if time is None else time
    return DualState(b[keep], c[keep], state.log_prefactor + log_scale, state.jump_times + (t,), state.elapsed)


def fidelity_trials(n: int, rng: np.random.Generator, max_J: int = 6, points_per_state: int = 10) -> float:
    """Largest relative error between a merged state and its unmerged product.

    Draws ``n // points_per_state`` random Gaussian-product states, applies
    random jumps to each and evaluates, at ``points_per_state`` random points,
    both the merged representation and the original factors with the
    identified coordinates substituted (``n`` comparisons in total).
    """
    worst = 0.0
    for _ in range(max(1, n // points_per_state)):
        d = int(rng.integers(1, 4))
        J = int(rng.integers(2, max_J + 1))
        bw = np.exp(rng.uniform(-2.0, 1.5, J))
        ce = rng.standard_normal((J, d))
        state = DualState(bw, ce)
        owner = list(range(J))  # coordinate that each original factor now reads
        slots = list(range(J))  # original coordinate label of every live slot
        for _ in range(int(rng.integers(1, J))):
            i, j = choose_pair(state.J, rng)
            keep, drop = slots[i], slots[j]
            owner = [keep if o == drop else o for o in owner]
            state = apply_jump(state, i, j)
            del slots[j]
        y = rng.standard_normal((points_per_state, state.J, d)) * 1.5
        col = np.array([slots.index(o) for o in owner])
        diff = y[:, col, :] - ce
        direct = np.sum(-0.5 * d * np.log(2.0 * math.pi * bw) - np.einsum("pkd,pkd->pk", diff, diff) / (2.0 * bw), axis=-1)
        worst = max(worst, float(np.max(np.abs(np.expm1(state.log_value(y) - direct)))))
    return worst


def choose_pair(J: int, rng: np.random.Generator) -> tuple[int, int]:
    """Uniform ordered pair ``(i, j)``, ``i != j``, each with probability ``1/J(J-1)``."""
    k = int(rng.integers(J * (J - 1)))
    i, r = divmod(k, J - 1)
    j = r if r < i else r + 1
    return i, j


def jump_times(m: int, gamma_sigma2: float, t: float, rng: np.random.Generator) -> list[float]:
    """Jump times of ``J`` on ``[0, t]``: at level ``l`` the rate is ``gamma_sigma2 l(l-1)/2``."""
    if m < 1:
        raise DomainError("m must be at least 1")
    times = []
    now, level = 0.0, m
    while level > 1 and gamma_sigma2 > 0:
        now += rng.exponential(1.0 / (gamma_sigma2 * level * (level - 1) / 2.0))
        if now > t:
            break
        times.append(now)
        level -= 1
    return times


def occupation_integral(m: int, times: Sequence[float], t: float) -> float:
    """``int_0^t J_s (J_s - 1) ds`` for ``J`` starting at ``m`` and dropping at ``times``."""
    total, prev, level = 0.0, 0.0, m
    for tau in times:
        total += level * (level - 1) * (tau - prev)
        prev, level = tau, level - 1
    return total + level * (level - 1) * (t - prev)


@dataclass(frozen=True)
class DualRunResult:
    state: DualState
    log_weight: float
    pairing: float

    @property
    def weight(self) -> float:
        return math.exp(self.log_weight)

    @property
    def value(self) -> float:
        return self.weight * self.pairing


def run_dual(f: DualState, mu0: MeasureSpec, t: float, gamma_sigma2: float, rng: np.random.Generator) -> DualRunResult:
    """One dual trajectory on ``[0, t]`` started at ``f``."""
    times = jump_times(f.J, gamma_sigma2, t, rng)
    state, prev = f, 0.0
    for tau in times:
        state = evolve(state, tau - prev)
        i, j = choose_pair(state.J, rng)
        state = apply_jump(state, i, j, tau)
        prev = tau
    state = evolve(state, t - prev)
    log_w = 0.5 * gamma_sigma2 * occupation_integral(f.J, times, t)
    return DualRunResult(state, log_w, state.pair_product(mu0))


def duality_rhs(f: DualState, mu0: MeasureSpec, t: float, gamma_sigma2: float, replicas: int, seed: int = 0) -> MeanSE:
    """Monte-Carlo estimate of ``E[exp(gs2/2 int J(J-1)) <Y_t, mu0^{J_t}>]``.

    For ``J = 1`` there are no jumps and a single evaluation is exact.
    """
    if t < 0:
        raise DomainError("t must be nonnegative")
    if f.J == 1 or gamma_sigma2 == 0:
        v = run_dual(f, mu0, t, 0.0, np.random.default_rng(0)).value
        return MeanSE(v, 0.0, 1)
    acc = RunningMoments()
    for r in range(replicas):
        acc.push(run_dual(f, mu0, t, gamma_sigma2, replica_rng(seed, r)).value)
    return MeanSE(float(acc.mean), float(acc.se), acc.count)


@dataclass(frozen=True)
class DualityReport:
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    z_score: float
    passed: bool
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "lhs_se": self.lhs_se, "rhs": self.rhs, "rhs_se": self.rhs_se, "z_score": self.z_score, "pass": self.passed, **self.extra}


def particle_moment(path_cloud, f: DualState) -> float:
    """``<f, mu^m>`` for a cloud; the Gaussian product factorizes over coordinates."""
    total = math.exp(f.log_prefactor)
    for s, c in f.factors:
        total *= path_cloud.pair(lambda x, s=s, c=c: np.atleast_1d(gaussian_density(s, x - c)))
    return total


def compare(lhs: MeanSE, rhs: MeanSE, n_se: float = 3.0, **extra) -> DualityReport:
    se = math.hypot(lhs.se, rhs.se)
    z = z_score(lhs.mean - rhs.mean, se)
    return DualityReport(lhs.mean, lhs.se, rhs.mean, rhs.se, z, abs(z) <= n_se, dict(extra))


def duality_check(f: DualState, config, replicas: int, dual_replicas: int = 100_000, n_se: float = 3.0) -> DualityReport:
    """Particle estimate of ``E<f, mu_t^m>`` against the dual side.

    ``config`` is a :class:`sdsmlab.particle.SimConfig` with the standard
    kernel; its horizon is the comparison time ``t``.
    """
    from .particle import run_sdsm, validate_sim_config

    if not config.model.is_standard:
        raise ConfigError("the exact dual covers the standard kernel only", "/model")
    if f.dimension != config.model.dimension:
        raise ConfigError("test function dimension differs from the model", "/duality/f")
    validate_sim_config(config)
    acc = RunningMoments()
    for r in range(replicas):
        path = run_sdsm(config, r, check=False)
        acc.push(particle_moment(path.final, f))
    lhs = MeanSE(float(acc.mean), float(acc.se), acc.count)
    rhs = duality_rhs(f, config.initial_measure, config.horizon, config.gamma_sigma2, dual_replicas, seed=config.seed + 1)
    return compare(lhs, rhs, n_se, m=f.J, t=config.horizon)
