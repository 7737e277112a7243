"""Branching particle approximation with individual and common noise.

Each step moves every particle by an Euler-Maruyama increment whose joint
covariance is ``Gamma(x) dt``: an individual part ``c(x_i) dB_i`` plus a
common part whose cross-covariance is ``rho(x_i - x_j) dt``.  Then every
particle of mass ``m`` independently branches with probability
``gamma sigma2 dt / m``; a branching particle dies or splits in two with
equal probability.  The ``1/m`` rate makes the branching martingale have
quadratic variation ``gamma sigma2 int <phi^2, mu_s> ds`` for any particle
mass.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, Mapping, Protocol

import numpy as np

from . import kernels
from .cloud import ParticleCloud
from .errors import ConfigError, FactorizationError
from .kernels import KernelModel, gaussian_density
from .measures import MeasureSpec, measure_from_dict, sample, upsilon
from .stats import MeanSE, replica_rng, z_score

log = logging.getLogger(__name__)

__all__ = [
    "ParticleCloud",
    "StepRecord",
    "BranchEvent",
    "EventLog",
    "SimConfig",
    "SimPath",
    "sample_step_increments",
    "diffuse_step",
    "branch_step",
    "run_sdsm",
    "pair_empirical",
    "GaussianTest",
    "ConstantTest",
    "spde_decomposition",
    "spde_qv_check",
]

MAX_BRANCH_PROBABILITY = 0.5


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepRecord:
    """One diffusion step: pre-step state, both increments and branching outcome.

    ``offspring[i]`` is the number of particles particle ``i`` became at the
    branch step that follows (0, 1 or 2).  The post-step cloud is
    ``repeat(positions + common + individual, offspring)``.
    """

    time: float
    dt: float
    positions: np.ndarray
    masses: np.ndarray
    common: np.ndarray
    individual: np.ndarray
    offspring: np.ndarray | None = None

    @property
    def moved(self) -> np.ndarray:
        return self.positions + self.common + self.individual


@dataclass(frozen=True)
class BranchEvent:
    time: float
    position: np.ndarray
    delta_mass: float


@dataclass
class EventLog:
    """Columnar branch-event log: times, positions and signed mass changes."""

    dimension: int
    times: list = field(default_factory=list)
    positions: list = field(default_factory=list)
    deltas: list = field(default_factory=list)

    def extend(self, time: float, positions: np.ndarray, deltas: np.ndarray) -> None:
        if len(deltas):
            self.times.append(np.full(len(deltas), time))
            self.positions.append(positions)
            self.deltas.append(deltas)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.deltas:
            return np.zeros(0), np.zeros((0, self.dimension)), np.zeros(0)
        return np.concatenate(self.times), np.concatenate(self.positions), np.concatenate(self.deltas)

    def __len__(self) -> int:
        return sum(len(x) for x in self.deltas)

    def __iter__(self) -> Iterator[BranchEvent]:
        t, x, dm = self.arrays()
        for k in range(len(dm)):
            yield BranchEvent(float(t[k]), x[k], float(dm[k]))


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    """Inputs of one particle simulation (shared by all replicas)."""

    model: KernelModel
    initial_measure: MeasureSpec
    particles: int
    dt: float
    horizon: float
    gamma: float = 1.0
    sigma2: float = 1.0
    snapshots: tuple = ()
    seed: int = 0
    keep_steps: bool = True
    waive_hypotheses: bool = False

    def __post_init__(self):
        if self.model.dimension != self.initial_measure.dimension:
            raise ConfigError("model and initial measure dimensions differ", "/initial_measure")
        if not self.dt > 0:
            raise ConfigError("dt must be positive", "/dt")
        if not self.horizon >= 0:
            raise ConfigError("horizon must be nonnegative", "/horizon")
        if self.particles < 1:
            raise ConfigError("need at least one particle", "/particles")
        if self.gamma < 0 or self.sigma2 < 0:
            raise ConfigError("gamma and sigma2 must be nonnegative", "/gamma")
        ratio = self.horizon / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ConfigError("horizon must be a multiple of dt", "/horizon")
        snaps = tuple(float(s) for s in self.snapshots)
        for k, s in enumerate(snaps):
            r = s / self.dt
            if s < 0 or s > self.horizon * (1 + 1e-12) or abs(r - round(r)) > 1e-9 * max(1.0, r):
                raise ConfigError("snapshot times must lie on the step grid in [0, horizon]", f"/snapshots/{k}")
        if any(b <= a for a, b in zip(snaps, snaps[1:])):
            raise ConfigError("snapshot times must be strictly increasing", "/snapshots")
        object.__setattr__(self, "snapshots", snaps)
        mass = self.initial_measure.total_mass
        if mass.is_finite:
            p = self.gamma * self.sigma2 * self.dt * self.particles / mass.value
            if p > MAX_BRANCH_PROBABILITY:
                raise ConfigError(
                    f"branching probability per step {p:.3g} exceeds {MAX_BRANCH_PROBABILITY}; "
                    "reduce dt or increase the mass per particle",
                    "/dt",
                )

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def gamma_sigma2(self) -> float:
        return self.gamma * self.sigma2

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "initial_measure": self.initial_measure.to_dict(),
            "particles": self.particles,
            "dt": self.dt,
            "horizon": self.horizon,
            "gamma": self.gamma,
            "sigma2": self.sigma2,
            "snapshots": list(self.snapshots),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any], **overrides) -> SimConfig:
        missing = [k for k in ("model", "initial_measure", "particles", "dt", "horizon") if k not in doc]
        if missing:
            raise ConfigError("missing key", f"/{missing[0]}")
        kw = dict(
            model=KernelModel.from_dict(doc["model"]),
            initial_measure=measure_from_dict(doc["initial_measure"]),
            particles=int(doc["particles"]),
            dt=float(doc["dt"]),
            horizon=float(doc["horizon"]),
            gamma=float(doc.get("gamma", 1.0)),
            sigma2=float(doc.get("sigma2", 1.0)),
            snapshots=tuple(doc.get("snapshots", ())),
            seed=int(doc.get("seed", 0)),
        )
        kw.update(overrides)
        return cls(**kw)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def validate_sim_config(config: SimConfig, n_configurations: int = 60) -> tuple[float, float]:
    """Ellipticity gate plus the initial-measure hypotheses.

    Returns the ellipticity estimates.  An infinite ``Upsilon`` raises
    :class:`ConfigError` unless ``waive_hypotheses`` is set.
    """
    rng = np.random.default_rng(20240607)
    configs = kernels.random_configurations(config.model.dimension, 4, n_configurations, rng)
    lam = kernels.check_ellipticity(config.model, configs)
    if not config.waive_hypotheses:
        ups = upsilon(config.initial_measure, max(config.horizon, config.dt))
        if not ups.is_finite:
            raise ConfigError("initial measure has infinite Upsilon; set waive_hypotheses to simulate anyway", "/initial_measure")
    return lam


# ---------------------------------------------------------------------------
# Steps
# ---------------------------------------------------------------------------


def _cholesky(mat: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-12 * float(np.trace(mat))
    log.debug("common covariance not positive definite; retrying with jitter %.3g", jitter)
    try:
        return np.linalg.cholesky(mat + jitter * np.eye(mat.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("common-noise covariance is not positive semidefinite") from exc


def _individual(model: KernelModel, positions: np.ndarray, z: np.ndarray) -> np.ndarray:
    if model.c_field is not None:
        return np.einsum("...ij,...j->...i", model.c(positions), z)
    if model.c_kind == "identity":
        return z
    return z @ model.c_matrix.T


def sample_step_increments(model: KernelModel, positions, dt: float, rng: np.random.Generator, size: int | None = None):
    """Draw ``(common, individual)`` increments for one step.

    Shapes are ``(N, d)``, or ``(size, N, d)`` when ``size`` is given (many
    independent draws for the same frozen configuration).  Coincident
    particles receive identical common increments; only distinct positions
    enter the factorization.  For Gaussian ``h`` (shared bandwidth ``s``,
    amplitudes ``A``) the common covariance is ``K (x) A A^T`` with
    ``K_ij = phi_{2s}(x_i - x_j)``, so an ``N x N`` factorization suffices.
    """
    pos = np.asarray(positions, dtype=float)
    n, d = pos.shape
    shape = (n, d) if size is None else (size, n, d)
    sqdt = math.sqrt(dt)
    z = rng.standard_normal(shape)
    individual = sqdt * _individual(model, pos, z)
    if model.h_kind == "zero" or n == 0:
        return np.zeros(shape), individual
    uniq, inverse = np.unique(pos, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    u = uniq.shape[0]
    if model.h_kind == "gaussian":
        s, amp = model.gaussian_h
        diff = uniq[:, None, :] - uniq[None, :, :]
        chol = _cholesky(np.asarray(gaussian_density(2.0 * s, diff)))
        xi = rng.standard_normal((u,) if size is None else (size, u))
        scalar = sqdt * xi @ chol.T
        common = scalar[..., inverse, None] * amp
    else:
        chol = _cholesky(kernels.common_covariance(model, uniq))
        xi = rng.standard_normal((u * d,) if size is None else (size, u * d))
        flat = sqdt * xi @ chol.T
        common = flat.reshape(flat.shape[:-1] + (u, d))[..., inverse, :]
    return common, individual


def diffuse_step(cloud: ParticleCloud, model: KernelModel, dt: float, rng: np.random.Generator) -> tuple[ParticleCloud, StepRecord]:
    """Move every particle by one correlated Euler-Maruyama increment."""
    if not dt > 0:
        raise ConfigError("dt must be positive", "/dt")
    common, individual = sample_step_increments(model, cloud.positions, dt, rng)
    record = StepRecord(cloud.time, dt, cloud.positions, cloud.masses, common, individual)
    moved = ParticleCloud(cloud.positions + common + individual, cloud.masses, cloud.time + dt)
    return moved, record


def branch_step(cloud: ParticleCloud, gamma: float, sigma2: float, dt: float, rng: np.random.Generator):
    """Critical binary branching over one step.

    Returns ``(cloud', offspring, event_positions, event_deltas)``; events
    carry ``-m`` for a death and ``+m`` for a split.
    """
    n = cloud.alive
    d = cloud.dimension
    if gamma * sigma2 == 0 or n == 0:
        return cloud, np.ones(n, dtype=np.int64), np.zeros((0, d)), np.zeros(0)
    p = gamma * sigma2 * dt / cloud.masses
    if np.any(p > MAX_BRANCH_PROBABILITY):
        raise ConfigError(f"branching probability {p.max():.3g} exceeds {MAX_BRANCH_PROBABILITY}", "/dt")
    u = rng.random(n)
    coin = rng.random(n) < 0.5
    branch = u < p
    offspring = np.ones(n, dtype=np.int64)
    offspring[branch & coin] = 0
    offspring[branch & ~coin] = 2
    new = ParticleCloud(np.repeat(cloud.positions, offspring, axis=0), np.repeat(cloud.masses, offspring), cloud.time)
    ev_pos = cloud.positions[branch]
    ev_delta = np.where(offspring[branch] == 0, -1.0, 1.0) * cloud.masses[branch]
    return new, offspring, ev_pos, ev_delta


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------


@dataclass
class SimPath:
    """Output of one replica."""

    times: np.ndarray
    clouds: list
    final: ParticleCloud
    initial: ParticleCloud
    steps: list | None
    events: EventLog
    seed: int
    replica: int
    config_hash: str
    dt: float
    extinct: bool = False

    def hash(self) -> str:
        h = hashlib.sha256()
        for t, c in zip(self.times, self.clouds):
            h.update(np.float64(t).tobytes())
            h.update(c.positions.tobytes())
            h.update(c.masses.tobytes())
        h.update(self.final.positions.tobytes())
        for arr in self.events.arrays():
            h.update(np.ascontiguousarray(arr).tobytes())
        for rec in self.steps or ():
            h.update(rec.common.tobytes())
        return h.hexdigest()

    def states(self):
        """Every-step states ``(t_k, positions, masses)``, ``k = 0..n_steps``.

        Uses the step records when kept, else the snapshots.
        """
        if self.steps is None:
            return [(float(t), c.positions, c.masses) for t, c in zip(self.times, self.clouds)]
        out = [(rec.time, rec.positions, rec.masses) for rec in self.steps]
        out.append((self.final.time, self.final.positions, self.final.masses))
        return out

    def write_csv(self, path, events_path=None) -> None:
        """Snapshot rows ``(snapshot_time, particle_index, x1..xd, mass)``."""
        d = self.final.dimension
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["snapshot_time", "particle_index"] + [f"x{k + 1}" for k in range(d)] + ["mass"])
            for t, c in zip(self.times, self.clouds):
                for i in range(c.alive):
                    w.writerow([_fmt(t), i] + [_fmt(v) for v in c.positions[i]] + [_fmt(c.masses[i])])
        if events_path is not None:
            t, x, dm = self.events.arrays()
            with open(events_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["time"] + [f"x{k + 1}" for k in range(d)] + ["delta_mass"])
                for k in range(len(dm)):
                    w.writerow([_fmt(t[k])] + [_fmt(v) for v in x[k]] + [_fmt(dm[k])])


def _fmt(v) -> str:
    return "%.17g" % float(v)


StepCallback = Callable[[StepRecord, ParticleCloud], None]


def run_sdsm(config: SimConfig, replica: int = 0, on_step: StepCallback | None = None, check: bool = True) -> SimPath:
    """Simulate one replica of the particle system.

    The replica's generator is derived from ``config.seed`` and ``replica``
    (see :func:`sdsmlab.stats.replica_rng`).  ``on_step(record, cloud)`` is
    called after every step with the completed record (offspring filled in)
    and the post-step cloud, which lets callers stream-reduce the path
    instead of keeping ``StepRecord`` objects.
    """
    if check:
        validate_sim_config(config)
    rng = replica_rng(config.seed, replica)
    model = config.model
    d = model.dimension
    cloud = sample(config.initial_measure, config.particles, rng)
    initial = cloud
    snap_idx = {int(round(s / config.dt)): s for s in config.snapshots}
    times, clouds = [], []
    steps: list | None = [] if config.keep_steps else None
    events = EventLog(d)
    extinct = False
    for k in range(config.n_steps):
        t = k * config.dt
        if k in snap_idx:
            times.append(snap_idx[k])
            clouds.append(cloud)
        if cloud.extinct:
            extinct = True
            cloud = ParticleCloud.empty(d, t + config.dt)
            rec = StepRecord(t, config.dt, cloud.positions, cloud.masses, np.zeros((0, d)), np.zeros((0, d)), np.zeros(0, dtype=np.int64))
        else:
            moved, rec = diffuse_step(cloud, model, config.dt, rng)
            cloud, offspring, ev_pos, ev_delta = branch_step(moved, config.gamma, config.sigma2, config.dt, rng)
            rec = StepRecord(rec.time, rec.dt, rec.positions, rec.masses, rec.common, rec.individual, offspring)
            events.extend(t + config.dt, ev_pos, ev_delta)
        if steps is not None:
            steps.append(rec)
        if on_step is not None:
            on_step(rec, cloud)
    if config.n_steps in snap_idx:
        times.append(snap_idx[config.n_steps])
        clouds.append(cloud)
    extinct = extinct or cloud.extinct
    return SimPath(np.asarray(times, dtype=float), clouds, cloud, initial, steps, events, config.seed, replica, config.config_hash(), config.dt, extinct)


def pair_empirical(cloud: ParticleCloud, f) -> float:
    """``sum_i m_i f(x_i)``."""
    return cloud.pair(f)


# ---------------------------------------------------------------------------
# SPDE martingale check
# ---------------------------------------------------------------------------


class TestFunction(Protocol):
    def value(self, x: np.ndarray) -> np.ndarray: ...
    def grad(self, x: np.ndarray) -> np.ndarray: ...
    def hess(self, x: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class GaussianTest:
    """``phi(x) = weight * phi_s(x - center)`` with analytic derivatives."""

    center: Any
    bandwidth: float
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))

    def value(self, x):
        return self.weight * np.atleast_1d(gaussian_density(self.bandwidth, x - self.center))

    def grad(self, x):
        y = x - self.center
        return -y / self.bandwidth * self.value(x)[:, None]

    def hess(self, x):
        y = x - self.center
        s = self.bandwidth
        d = y.shape[-1]
        outer = np.einsum("ni,nj->nij", y, y) / s**2 - np.eye(d) / s
        return outer * self.value(x)[:, None, None]

    __call__ = value


@dataclass(frozen=True)
class ConstantTest:
    level: float = 1.0

    def value(self, x):
        return np.full(x.shape[0], self.level)

    def grad(self, x):
        return np.zeros_like(x)

    def hess(self, x):
        return np.zeros(x.shape + (x.shape[-1],))

    __call__ = value


def generator_G1(model: KernelModel, phi: TestFunction, x: np.ndarray) -> np.ndarray:
    """``G_1 phi = 1/2 sum_pq (a_pq(x) + rho_pq(0)) d_p d_q phi``."""
    coef = model.a(x) + kernels.rho(model, np.zeros(model.dimension))
    return 0.5 * np.einsum("nij,nij->n", coef, phi.hess(x))


def common_quadratic_form(model: KernelModel, positions: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``g^T C g`` for the common covariance ``C`` (per unit time).

    ``g`` has shape ``(N, d)`` or ``(N, d, P)`` (``P`` vectors at once).
    """
    squeeze = g.ndim == 2
    if squeeze:
        g = g[..., None]
    n, d, p = g.shape
    if model.h_kind == "zero" or n == 0:
        out = np.zeros(p)
    elif model.h_kind == "gaussian":
        s, amp = model.gaussian_h
        kmat = np.asarray(gaussian_density(2.0 * s, positions[:, None, :] - positions[None, :, :]))
        u = np.einsum("ndp,d->np", g, amp)
        out = np.einsum("np,np->p", u, kmat @ u)
    else:
        cmat = kernels.common_covariance(model, positions)
        flat = g.reshape(n * d, p)
        out = np.einsum("kp,kp->p", flat, cmat @ flat)
    return out[0] if squeeze else out


@dataclass(frozen=True)
class SPDEReplica:
    """Per-replica martingale residual and its predicted quadratic variation."""

    D: float
    qv_branch: float
    qv_env: float
    qv_individual: float

    @property
    def qv_total(self) -> float:
        return self.qv_branch + self.qv_env + self.qv_individual


def spde_decomposition(path: SimPath, phi: TestFunction, model: KernelModel, gamma: float, sigma2: float) -> SPDEReplica:
    """``D_t(phi) = <phi, mu_t> - <phi, mu_0> - int <G_1 phi, mu_s> ds`` and its QV.

    The drift integral uses the trapezoid rule over the step grid, whose
    expectation matches the one-step semigroup to second order in ``dt``
    (left-point sums leave an ``O(dt)`` bias in ``E[D]``).  The predicted
    quadratic variation accumulates, step by step, the exact conditional
    variances of the three noise sources: branching
    (``gamma sigma2 dt <phi^2, mu'>`` at post-diffusion positions),
    environment (``dt g^T C g`` with ``g_i = m_i grad phi(x_i)``) and the
    individual noise (``dt sum m_i^2 grad phi^T a grad phi``), the last being
    of order ``1/N``.
    """
    if path.steps is None:
        raise ConfigError("spde_decomposition needs step records (keep_steps)")
    qv_b = qv_e = qv_i = 0.0
    gs2 = gamma * sigma2
    gen = [float(np.dot(m, generator_G1(model, phi, x))) if x.shape[0] else 0.0 for _, x, m in path.states()]
    drift = sum(0.5 * rec.dt * (gen[k] + gen[k + 1]) for k, rec in enumerate(path.steps))
    for rec in path.steps:
        if rec.positions.shape[0] == 0:
            continue
        x, m, dt = rec.positions, rec.masses, rec.dt
        qv_b += gs2 * dt * float(np.dot(m, phi.value(rec.moved) ** 2))
        g = m[:, None] * phi.grad(x)
        qv_e += dt * float(common_quadratic_form(model, x, g))
        qv_i += dt * float(np.einsum("ni,nij,nj->", g, model.a(x), g))
    start = path.initial.pair(phi.value)
    end = path.final.pair(phi.value)
    return SPDEReplica(end - start - drift, qv_b, qv_e, qv_i)


@dataclass(frozen=True)
class SPDEReport:
    mean_D: MeanSE
    var_D: MeanSE  # mean of D^2
    predicted_qv: MeanSE
    excess: MeanSE  # mean of D^2 - QV (a martingale identity, should be ~0)
    z_mean: float
    z_var: float
    passed: bool
    components: dict

    def to_dict(self) -> dict:
        return {
            "mean_D": self.mean_D.mean,
            "mean_D_se": self.mean_D.se,
            "second_moment": self.var_D.mean,
            "second_moment_se": self.var_D.se,
            "predicted_qv": self.predicted_qv.mean,
            "predicted_qv_se": self.predicted_qv.se,
            "excess": self.excess.mean,
            "excess_se": self.excess.se,
            "z_mean": self.z_mean,
            "z_var": self.z_var,
            "pass": self.passed,
            **self.components,
        }


def summarize_spde(reps: Iterable[SPDEReplica], n_se: float = 3.0) -> SPDEReport:
    """Aggregate replicas: ``E[D] = 0`` and ``E[D^2 - QV] = 0`` within ``n_se`` SE."""
    reps = list(reps)
    D = np.array([r.D for r in reps])
    qv = np.array([r.qv_total for r in reps])
    mean_D = MeanSE.of(D)
    sq = MeanSE.of(D**2)
    pred = MeanSE.of(qv)
    excess = MeanSE.of(D**2 - qv)
    zm = z_score(mean_D.mean, mean_D.se)
    zv = z_score(excess.mean, excess.se)
    comps = {
        "qv_branch": float(np.mean([r.qv_branch for r in reps])),
        "qv_env": float(np.mean([r.qv_env for r in reps])),
        "qv_individual": float(np.mean([r.qv_individual for r in reps])),
    }
    return SPDEReport(mean_D, sq, pred, excess, zm, zv, abs(zm) <= n_se and abs(zv) <= n_se, comps)


def spde_qv_check(paths: Iterable[SimPath], phi: TestFunction, model: KernelModel, gamma: float, sigma2: float, n_se: float = 3.0) -> SPDEReport:
    """Check the martingale decomposition of ``<phi, mu_t>`` over replicas.

    ``paths`` may be a generator, so replicas are reduced one at a time.
    """
    return summarize_spde((spde_decomposition(p, phi, model, gamma, sigma2) for p in paths), n_se)
