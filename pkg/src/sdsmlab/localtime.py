"""Local time along simulated paths.

Two estimators are provided:

* the occupation-density estimator, a trapezoidal time integral of
  ``<phi_eps(x - .), mu_s>``;
* the five-term Tanaka representation built from the Green function
  ``Q^lam``: initial and terminal pairings, the ``lam``-correction, the
  environment stochastic integral (left-point sums against the recorded
  common-noise increments) and the branching integral (a sum over events).

Both are evaluated by :class:`TanakaAccumulator`, which replays a path's
step records once for a whole set of evaluation points, ``lam`` values and
recording times.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, DomainError
from .kernels import GreenEvaluator, KernelModel, gaussian_density
from .particle import SimConfig, SimPath, common_quadratic_form, run_sdsm, validate_sim_config
from .stats import MeanSE, z_score

TERM_NAMES = ("term_initial", "term_terminal", "term_lambda", "term_env", "term_branch")
R_CUT = 1e-4


# ---------------------------------------------------------------------------
# Result types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TanakaBreakdown:
    """Five Tanaka terms at one ``(t, x, lam)``."""

    x: np.ndarray
    t: float
    lam: float
    term_initial: float
    term_terminal: float
    term_lambda: float
    term_env: float
    term_branch: float
    clamped: int = 0
    evaluations: int = 0

    @property
    def terms(self) -> tuple[float, ...]:
        return (self.term_initial, self.term_terminal, self.term_lambda, self.term_env, self.term_branch)

    @property
    def total(self) -> float:
        return float(sum(self.terms))


@dataclass
class AccumulatorResult:
    """Per-path output of :class:`TanakaAccumulator` (record axis first)."""

    times: np.ndarray  # (K,)
    terms: np.ndarray  # (K, L, P, 5)
    occupation: np.ndarray  # (K, E, P)
    test_integrals: np.ndarray  # (K, F)
    branch_qv: np.ndarray  # (K, L, P)
    env_qv: np.ndarray  # (K, L, P)
    env_bound: np.ndarray  # (K, L, P)
    pair_branch_qv: np.ndarray  # (K, L, Q)
    pair_env_qv: np.ndarray  # (K, L, Q)
    pair_env_bound: np.ndarray  # (K, L, Q)
    clamped: int = 0
    evaluations: int = 0

    @property
    def totals(self) -> np.ndarray:
        return self.terms.sum(axis=-1)


# ---------------------------------------------------------------------------
# Accumulator
# ---------------------------------------------------------------------------


def h_bar(model: KernelModel) -> float:
    """``max_p sup_{w1,w2} int |h_p(y - w1)| |h_p(y - w2)| dy``.

    For Gaussian ``h`` this is ``max_p A_p^2 phi_{2s}(0)``; otherwise it is
    bounded by ``max_p ||h_p||_inf ||h_p||_1`` computed on the table grid.
    """
    if model.h_kind == "zero":
        return 0.0
    if model.h_kind == "gaussian":
        s, amp = model.gaussian_h
        return float(np.max(amp**2) * gaussian_density(2.0 * s, np.zeros(model.dimension)))
    tab = model._cache["table"]
    vals = np.abs(tab["values"])
    cell = tab["spacing"] ** model.dimension
    return float(max(vals[p].max() * vals[p].sum() * cell for p in range(model.dimension)))


class TanakaAccumulator:
    """Replay step records and accumulate local-time quantities.

    Parameters
    ----------
    model:
        Constant-coefficient kernel model (for ``Q^lam``).
    points:
        ``(P, d)`` evaluation points.
    lams:
        Values of ``lam``.
    record_every:
        Record running totals every this many steps (the final time is
        always recorded).
    eps:
        Bandwidths of the occupation estimator (may be empty).
    test_functions:
        Callables ``f(x) -> (N,)`` whose occupation integrals
        ``int_0^t <f, mu_s> ds`` are accumulated.
    qv_points, qv_pairs:
        Indices of points (and ``(x, z)`` pairs) for which the quadratic
        variations of the environment and branching terms are tracked.
    gamma_sigma2:
        Branching parameter (needed only for the branching QV).
    """

    def __init__(
        self,
        model: KernelModel,
        points,
        lams: Sequence[float] = (1.0,),
        record_every: int = 1,
        eps: Sequence[float] = (),
        test_functions: Sequence[Callable] = (),
        qv_points: Sequence[int] = (),
        qv_pairs: Sequence[tuple[int, int]] = (),
        gamma_sigma2: float = 0.0,
        r_cut: float = R_CUT,
    ):
        if not model.constant_coefficients:
            raise DomainError("Tanaka evaluation needs a constant-coefficient model")
        self.model = model
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.points.shape[1] != model.dimension:
            raise DomainError("evaluation points have the wrong dimension")
        self.lams = tuple(float(l) for l in lams)
        self.evaluators = [GreenEvaluator(l, model, r_cut) for l in self.lams]
        self.record_every = int(record_every)
        if self.record_every < 1:
            raise ConfigError("record_every must be positive")
        self.eps = tuple(float(e) for e in eps)
        self.test_functions = tuple(test_functions)
        self.qv_points = np.asarray(qv_points, dtype=int)
        self.qv_pairs = np.asarray(qv_pairs, dtype=int).reshape(-1, 2)
        self.gamma_sigma2 = float(gamma_sigma2)
        self.hbar = h_bar(model)

    # -- evaluation helpers --------------------------------------------------

    def _green(self, pos: np.ndarray):
        L, P, d = len(self.lams), self.points.shape[0], self.model.dimension
        n = pos.shape[0]
        Q = np.empty((L, P, n))
        G = np.empty((L, P, n, d))
        clamped = 0
        diff = self.points[:, None, :] - pos[None, :, :]
        for l, ev in enumerate(self.evaluators):
            q, g, nc = ev(diff)
            Q[l], G[l] = q, g
            clamped += nc
        return Q, G, clamped, L * P * n

    def _aux(self, pos: np.ndarray):
        """Occupation kernels (E, P, N) and test-function values (F, N)."""
        n = pos.shape[0]
        diff = self.points[:, None, :] - pos[None, :, :]
        occ = np.empty((len(self.eps), self.points.shape[0], n))
        for e, eps in enumerate(self.eps):
            occ[e] = gaussian_density(eps, diff) if n else 0.0
        tf = np.empty((len(self.test_functions), n))
        for f, fn in enumerate(self.test_functions):
            tf[f] = np.asarray(fn(pos), dtype=float) if n else 0.0
        return occ, tf

    # -- main loop -------------------------------------------------------------

    def process(self, path: SimPath) -> AccumulatorResult:
        if path.steps is None:
            raise ConfigError("Tanaka evaluation needs step records; run with keep_steps")
        L, P = len(self.lams), self.points.shape[0]
        E, F, Qn = len(self.eps), len(self.test_functions), self.qv_pairs.shape[0]
        gs2 = self.gamma_sigma2
        d = self.model.dimension

        pos0, m0 = path.initial.positions, path.initial.masses
        Qc, Gc, clamped, evals = self._green(pos0)
        occ_c, tf_c = self._aux(pos0)
        mass = m0

        initial = np.einsum("lpn,n->lp", Qc, mass)
        A_prev = initial.copy()
        occ_prev = np.einsum("epn,n->ep", occ_c, mass)
        tf_prev = tf_c @ mass

        lam_int = np.zeros((L, P))
        env = np.zeros((L, P))
        branch = np.zeros((L, P))
        occ_int = np.zeros((E, P))
        tf_int = np.zeros(F)
        bqv = np.zeros((L, P))
        eqv = np.zeros((L, P))
        ebd = np.zeros((L, P))
        pbqv = np.zeros((L, Qn))
        peqv = np.zeros((L, Qn))
        pebd = np.zeros((L, Qn))
        lam_vec = np.asarray(self.lams)[:, None]

        rec_times, rec = [], []

        def record(t, A_now):
            terms = np.stack([initial, -A_now, lam_int, env, branch], axis=-1)
            rec_times.append(t)
            rec.append((terms.copy(), occ_int.copy(), tf_int.copy(), bqv.copy(), eqv.copy(), ebd.copy(), pbqv.copy(), peqv.copy(), pebd.copy()))

        record(path.initial.time, A_prev)
        nsteps = len(path.steps)
        for k, step in enumerate(path.steps):
            dt = step.dt
            n = step.positions.shape[0]
            if n:
                x = step.positions
                # Environment term: sum_i m_i grad_z Q(x - z)|_{x_i} . dW_i, with grad_z = -grad Q.
                env -= np.einsum("lpnd,nd,n->lp", Gc, step.common, mass)
                if self.qv_points.size or Qn:
                    self._accumulate_env_qv(x, mass, Gc, dt, eqv, ebd, peqv, pebd)
                moved = step.moved
                Qp, Gp, nc, ne = self._green(moved)
                clamped += nc
                evals += ne
                occ_p, tf_p = self._aux(moved)
                off = step.offspring if step.offspring is not None else np.ones(n, dtype=np.int64)
                branch += np.einsum("lpn,n->lp", Qp, mass * (off - 1))
                if gs2:
                    bqv += gs2 * dt * np.einsum("lpn,n->lp", Qp**2, mass)
                    if Qn:
                        diffq = Qp[:, self.qv_pairs[:, 1]] - Qp[:, self.qv_pairs[:, 0]]
                        pbqv += gs2 * dt * np.einsum("lqn,n->lq", diffq**2, mass)
                Qc = np.repeat(Qp, off, axis=-1)
                Gc = np.repeat(Gp, off, axis=-2)
                occ_c = np.repeat(occ_p, off, axis=-1)
                tf_c = np.repeat(tf_p, off, axis=-1)
                mass = np.repeat(mass, off)
            else:
                Qc = np.zeros((L, P, 0))
                Gc = np.zeros((L, P, 0, d))
                occ_c = np.zeros((E, P, 0))
                tf_c = np.zeros((F, 0))
                mass = np.zeros(0)
            A_now = np.einsum("lpn,n->lp", Qc, mass)
            occ_now = np.einsum("epn,n->ep", occ_c, mass)
            tf_now = tf_c @ mass
            lam_int += lam_vec * 0.5 * dt * (A_prev + A_now)
            occ_int += 0.5 * dt * (occ_prev + occ_now)
            tf_int += 0.5 * dt * (tf_prev + tf_now)
            A_prev, occ_prev, tf_prev = A_now, occ_now, tf_now
            if (k + 1) % self.record_every == 0 or k + 1 == nsteps:
                record(step.time + dt, A_now)

        arrays = [np.asarray(a) for a in zip(*rec)]
        return AccumulatorResult(np.asarray(rec_times), *arrays, clamped=clamped, evaluations=evals)

    def _accumulate_env_qv(self, x, mass, Gc, dt, eqv, ebd, peqv, pebd):
        d = self.model.dimension
        if self.qv_points.size:
            g = Gc[:, self.qv_points]  # (L, S, N, d)
            L, S = g.shape[:2]
            gm = (g * mass[None, None, :, None]).transpose(2, 3, 0, 1).reshape(x.shape[0], d, L * S)
            eqv[:, self.qv_points] += dt * common_quadratic_form(self.model, x, gm).reshape(L, S)
            absg = np.einsum("lsnd,n->lsd", np.abs(g), mass)
            ebd[:, self.qv_points] += dt * d * self.hbar * np.sum(absg**2, axis=-1)
        if self.qv_pairs.shape[0]:
            g = Gc[:, self.qv_pairs[:, 1]] - Gc[:, self.qv_pairs[:, 0]]  # (L, Q, N, d)
            L, Qn = g.shape[:2]
            gm = (g * mass[None, None, :, None]).transpose(2, 3, 0, 1).reshape(x.shape[0], d, L * Qn)
            peqv += dt * common_quadratic_form(self.model, x, gm).reshape(L, Qn)
            absg = np.einsum("lqnd,n->lqd", np.abs(g), mass)
            pebd += dt * d * self.hbar * np.sum(absg**2, axis=-1)


# ---------------------------------------------------------------------------
# Single-path operations
# ---------------------------------------------------------------------------


def _state_grid(path: SimPath, t0: float, t: float):
    states = [(tk, pos, m) for tk, pos, m in path.states() if t0 - 1e-12 <= tk <= t + 1e-12]
    if not states:
        raise ConfigError("no path states inside the requested time window")
    if abs(states[0][0] - t0) > 1e-9 or abs(states[-1][0] - t) > 1e-9:
        raise ConfigError("occupation window must start and end on recorded times")
    return states


def occupation_local_time(path: SimPath, x, t: float, eps: float, t0: float = 0.0) -> float:
    """Trapezoidal ``int_{t0}^t <phi_eps(x - .), mu_s> ds`` over the path's states."""
    if not eps > 0:
        raise DomainError("eps must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    states = _state_grid(path, t0, t)
    vals = [float(np.dot(m, np.atleast_1d(gaussian_density(eps, x - pos)))) if len(m) else 0.0 for _, pos, m in states]
    times = [s[0] for s in states]
    return float(np.trapezoid(vals, times)) if len(vals) > 1 else 0.0


def tanaka_local_time(path: SimPath, x, t: float, lam: float, model: KernelModel, r_cut: float = R_CUT) -> TanakaBreakdown:
    """Tanaka terms at ``(t, x)`` for one path (``t`` on the step grid)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if path.steps is None:
        raise ConfigError("Tanaka evaluation needs step records; run with keep_steps")
    k = int(round(t / path.dt))
    if abs(k * path.dt - t) > 1e-9 or k > len(path.steps):
        raise ConfigError("t must lie on the step grid of the path")
    acc = TanakaAccumulator(model, x[None, :], (lam,), record_every=1, r_cut=r_cut)
    res = acc.process(path)
    terms = res.terms[k, 0, 0]
    return TanakaBreakdown(x, float(res.times[k]), float(lam), *map(float, terms), clamped=res.clamped, evaluations=res.evaluations)


# ---------------------------------------------------------------------------
# Ensembles and fields
# ---------------------------------------------------------------------------


@dataclass
class LocalTimeField:
    """Per-replica local-time samples on a ``(t, x)`` grid.

    ``samples`` has shape ``(R, K, P)``; ``terms`` (optional) has shape
    ``(R, K, P, 5)`` with the Tanaka breakdown.
    """

    times: np.ndarray
    points: np.ndarray
    samples: np.ndarray
    lam: float | None = None
    terms: np.ndarray | None = None
    estimator: str = "tanaka"

    @property
    def values(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    @property
    def se(self) -> np.ndarray:
        r = self.samples.shape[0]
        if r < 2:
            return np.full(self.samples.shape[1:], np.nan)
        return self.samples.std(axis=0, ddof=1) / math.sqrt(r)

    def write_csv(self, path) -> None:
        """Rows ``(t, x1..xd, lambda, term1..term5, total, se)`` of replica means."""
        d = self.points.shape[1]
        mean_terms = self.terms.mean(axis=0) if self.terms is not None else None
        vals, se = self.values, self.se
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{k + 1}" for k in range(d)] + ["lambda"] + [f"term{k + 1}" for k in range(5)] + ["total", "se"])
            for k, t in enumerate(self.times):
                for p in range(self.points.shape[0]):
                    terms = mean_terms[k, p] if mean_terms is not None else [float("nan")] * 5
                    lam = self.lam if self.lam is not None else float("nan")
                    w.writerow([_fmt(t)] + [_fmt(v) for v in self.points[p]] + [_fmt(lam)] + [_fmt(v) for v in terms] + [_fmt(vals[k, p]), _fmt(se[k, p])])


def _fmt(v) -> str:
    return "%.17g" % float(v)


@dataclass
class LocalTimeEnsemble:
    """Stacked :class:`AccumulatorResult` arrays over replicas (leading axis ``R``)."""

    points: np.ndarray
    lams: tuple
    eps: tuple
    times: np.ndarray
    terms: np.ndarray  # (R, K, L, P, 5)
    occupation: np.ndarray  # (R, K, E, P)
    test_integrals: np.ndarray  # (R, K, F)
    branch_qv: np.ndarray
    env_qv: np.ndarray
    env_bound: np.ndarray
    pair_branch_qv: np.ndarray
    pair_env_qv: np.ndarray
    pair_env_bound: np.ndarray
    qv_points: np.ndarray
    qv_pairs: np.ndarray
    clamped: int = 0
    evaluations: int = 0
    extinct: int = 0

    @property
    def replicas(self) -> int:
        return self.terms.shape[0]

    @property
    def clamp_fraction(self) -> float:
        return self.clamped / max(self.evaluations, 1)

    def tanaka_field(self, lam_index: int = 0) -> LocalTimeField:
        terms = self.terms[:, :, lam_index]
        return LocalTimeField(self.times, self.points, terms.sum(axis=-1), self.lams[lam_index], terms, "tanaka")

    def occupation_field(self, eps_index: int = 0) -> LocalTimeField:
        return LocalTimeField(self.times, self.points, self.occupation[:, :, eps_index], None, None, f"occupation(eps={self.eps[eps_index]})")

    @classmethod
    def stack(cls, acc: TanakaAccumulator, results: Sequence[AccumulatorResult], extinct: int = 0) -> LocalTimeEnsemble:
        if not results:
            raise ValueError("no replicas")
        st = {name: np.stack([getattr(r, name) for r in results]) for name in (
            "terms", "occupation", "test_integrals", "branch_qv", "env_qv", "env_bound",
            "pair_branch_qv", "pair_env_qv", "pair_env_bound")}
        return cls(
            acc.points, acc.lams, acc.eps, results[0].times, qv_points=acc.qv_points, qv_pairs=acc.qv_pairs,
            clamped=sum(r.clamped for r in results), evaluations=sum(r.evaluations for r in results), extinct=extinct, **st,
        )


def run_local_time_ensemble(
    config: SimConfig,
    replicas: int,
    points,
    lams: Sequence[float] = (1.0,),
    eps: Sequence[float] = (),
    record_every: int = 1,
    test_functions: Sequence[Callable] = (),
    qv_points: Sequence[int] = (),
    qv_pairs: Sequence[tuple[int, int]] = (),
    on_path: Callable[[SimPath], None] | None = None,
    first_replica: int = 0,
) -> LocalTimeEnsemble:
    """Simulate ``replicas`` paths and accumulate local-time quantities.

    ``on_path`` sees each full path (with step records) before it is
    discarded, which lets other per-path statistics share the simulation.
    """
    if not config.keep_steps:
        raise ConfigError("local-time ensembles need keep_steps")
    validate_sim_config(config)
    acc = TanakaAccumulator(config.model, points, lams, record_every, eps, test_functions, qv_points, qv_pairs, config.gamma_sigma2)
    results, extinct = [], 0
    for r in range(first_replica, first_replica + replicas):
        path = run_sdsm(config, r, check=False)
        extinct += int(path.extinct)
        results.append(acc.process(path))
        if on_path is not None:
            on_path(path)
    return LocalTimeEnsemble.stack(acc, results, extinct)


def combine_ensembles(parts: Sequence[LocalTimeEnsemble]) -> LocalTimeEnsemble:
    """Concatenate ensembles computed for disjoint replica ranges (in order)."""
    first = parts[0]
    cat = {name: np.concatenate([getattr(p, name) for p in parts]) for name in (
        "terms", "occupation", "test_integrals", "branch_qv", "env_qv", "env_bound",
        "pair_branch_qv", "pair_env_qv", "pair_env_bound")}
    return LocalTimeEnsemble(
        first.points, first.lams, first.eps, first.times, qv_points=first.qv_points, qv_pairs=first.qv_pairs,
        clamped=sum(p.clamped for p in parts), evaluations=sum(p.evaluations for p in parts),
        extinct=sum(p.extinct for p in parts), **cat,
    )


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------


def tensor_gauss_legendre(lower, upper, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre nodes ``(n^d, d)`` and weights on a box."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    x, w = np.polynomial.legendre.leggauss(n)
    d = lower.shape[0]
    half = 0.5 * (upper - lower)
    axes = [lower[k] + half[k] * (x + 1.0) for k in range(d)]
    nodes = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    weights = np.ones(nodes.shape[0])
    for k, g in enumerate(np.meshgrid(*([w] * d), indexing="ij")):
        weights = weights * g.ravel() * half[k]
    return nodes, weights


@dataclass(frozen=True)
class Bump:
    """Smooth compactly supported bump ``exp(-1 / (1 - |x - c|^2 / R^2))``."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))

    def __call__(self, x):
        u = np.einsum("...i,...i->...", x - self.center, x - self.center) / self.radius**2
        out = np.zeros(u.shape)
        inside = u < 1.0
        out[inside] = np.exp(-1.0 / (1.0 - u[inside]))
        return out


@dataclass(frozen=True)
class LTReport:
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    rel_error: float
    tolerance: float
    passed: bool
    estimator: str

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("lhs", "lhs_se", "rhs", "rhs_se", "rel_error", "tolerance", "passed", "estimator")}


def check_LT_identity(field: LocalTimeField, weights, rhs_samples, time_index: int = -1, tolerance: float = 0.05) -> LTReport:
    """Compare ``int phi(x) Lambda_t^x dx`` with ``int_0^t <phi, mu_s> ds``.

    ``field`` holds ``Lambda`` at quadrature nodes covering the support of
    ``phi``; ``weights`` are the node weights multiplied by ``phi`` at the
    nodes; ``rhs_samples`` are per-replica direct integrals.  The check is on
    replica means with relative tolerance ``tolerance``.
    """
    lhs_r = field.samples[:, time_index, :] @ np.asarray(weights, dtype=float)
    lhs = MeanSE.of(lhs_r) if lhs_r.size > 1 else MeanSE(float(lhs_r[0]), 0.0, 1)
    rhs_r = np.asarray(rhs_samples, dtype=float)
    rhs = MeanSE.of(rhs_r) if rhs_r.size > 1 else MeanSE(float(rhs_r[0]), 0.0, 1)
    if lhs.mean == 0 and rhs.mean == 0:
        rel = 0.0
    else:
        rel = abs(lhs.mean - rhs.mean) / max(abs(rhs.mean), 1e-300)
    return LTReport(lhs.mean, lhs.se, rhs.mean, rhs.se, rel, tolerance, rel <= tolerance, field.estimator)


@dataclass(frozen=True)
class EstimatorComparison:
    """Replica-mean comparison of two local-time estimators at matched nodes."""

    mean_a: np.ndarray
    mean_b: np.ndarray
    se_paired: np.ndarray
    se_combined: np.ndarray
    z: np.ndarray
    passed: bool


def compare_estimators(a: np.ndarray, b: np.ndarray, n_se: float = 3.0) -> EstimatorComparison:
    """Compare per-replica samples ``a`` and ``b`` (shape ``(R, ...)``).

    The test statistic uses the standard error of the per-replica
    difference (both estimators are computed on the same paths);
    the unpaired combined SE is reported alongside.
    """
    r = a.shape[0]
    diff = a - b
    se_p = diff.std(axis=0, ddof=1) / math.sqrt(r)
    se_c = np.sqrt(a.var(axis=0, ddof=1) / r + b.var(axis=0, ddof=1) / r)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se_p > 0, diff.mean(axis=0) / se_p, 0.0)
    return EstimatorComparison(a.mean(axis=0), b.mean(axis=0), se_p, se_c, z, bool(np.all(np.abs(z) <= n_se)))


@dataclass(frozen=True)
class QVLine:
    """Empirical second moment of an increment against its predicted QV."""

    label: str
    empirical: float
    empirical_se: float
    predicted: float
    predicted_se: float
    z: float

    @property
    def ratio(self) -> float:
        return self.empirical / self.predicted if self.predicted else float("nan")

    def to_dict(self) -> dict:
        return {"label": self.label, "empirical": self.empirical, "empirical_se": self.empirical_se, "predicted": self.predicted,
                "predicted_se": self.predicted_se, "ratio": self.ratio, "z": self.z}


def _qv_line(label, incr, pred) -> QVLine:
    sq = MeanSE.of(incr**2)
    pr = MeanSE.of(pred)
    ex = MeanSE.of(incr**2 - pred)
    return QVLine(label, sq.mean, sq.se, pr.mean, pr.se, z_score(ex.mean, ex.se))


def qv_estimates(ens: LocalTimeEnsemble, x: int, z: int, s_index: int, t_index: int, lam_index: int = 0) -> dict[str, QVLine]:
    """Second moments of Tanaka martingale increments against predictions.

    Time lag: increments of the branching and environment terms at point
    ``x`` between record indices ``s_index < t_index``.  Space lag: the
    difference between points ``z`` and ``x`` at ``t_index``.  Branching
    predictions are the exact quadratic variations; for the environment both
    the exact QV (``g^T C g`` sums) and the upper bound
    ``d hbar sum_p int <|d_p Q|, mu>^2`` are reported.
    """
    T, B = 3, 4
    terms = ens.terms[:, :, lam_index]
    qp = list(ens.qv_points)
    pairs = [tuple(p) for p in ens.qv_pairs]
    if x not in qp:
        raise ConfigError("point x was not registered for QV tracking")
    if (x, z) not in pairs:
        raise ConfigError("pair (x, z) was not registered for QV tracking")
    iq = pairs.index((x, z))
    l = lam_index
    out = {}
    db = terms[:, t_index, x, B] - terms[:, s_index, x, B]
    de = terms[:, t_index, x, T] - terms[:, s_index, x, T]
    out["branch_time"] = _qv_line("branch_time", db, ens.branch_qv[:, t_index, l, x] - ens.branch_qv[:, s_index, l, x])
    out["env_time"] = _qv_line("env_time", de, ens.env_qv[:, t_index, l, x] - ens.env_qv[:, s_index, l, x])
    out["env_time_bound"] = _qv_line("env_time_bound", de, ens.env_bound[:, t_index, l, x] - ens.env_bound[:, s_index, l, x])
    sb = terms[:, t_index, z, B] - terms[:, t_index, x, B]
    se_ = terms[:, t_index, z, T] - terms[:, t_index, x, T]
    out["branch_space"] = _qv_line("branch_space", sb, ens.pair_branch_qv[:, t_index, l, iq])
    out["env_space"] = _qv_line("env_space", se_, ens.pair_env_qv[:, t_index, l, iq])
    out["env_space_bound"] = _qv_line("env_space_bound", se_, ens.pair_env_bound[:, t_index, l, iq])
    return out


# ---------------------------------------------------------------------------
# Hoelder exponents
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HolderReport:
    mode: str
    lags: np.ndarray
    moments: np.ndarray
    moment_se: np.ndarray
    exponent: float | None
    r2: float | None
    monotone: bool
    smooth_regime: bool
    n: int

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "lags": [float(v) for v in self.lags],
            "moments": [float(v) for v in self.moments],
            "moment_se": [float(v) for v in self.moment_se],
            "exponent": self.exponent,
            "r2": self.r2,
            "monotone": self.monotone,
            "smooth_regime": self.smooth_regime,
            "n": self.n,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _fit(lags, moments, n, mode, moment_se, smooth_threshold=0.95) -> HolderReport:
    lags = np.asarray(lags, dtype=float)
    moments = np.asarray(moments, dtype=float)
    monotone = bool(np.all(np.diff(moments) >= 0) and np.all(moments > 0))
    if not monotone:
        return HolderReport(mode, lags, moments, np.asarray(moment_se), None, None, False, False, n)
    lx, ly = np.log(lags), np.log(moments)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    exponent = float(slope / (2 * n))
    return HolderReport(mode, lags, moments, np.asarray(moment_se), exponent, r2, True, exponent >= smooth_threshold, n)


def holder_estimate(
    field: LocalTimeField,
    mode: str,
    n: int = 2,
    lag_steps: Sequence[int] | None = None,
    point: int = 0,
    start_index: int = 0,
    space_points: Sequence[int] | None = None,
    time_index: int = -1,
) -> HolderReport:
    """Least-squares slope of ``log E|dLambda|^{2n}`` against ``log lag``, over ``2n``.

    ``mode="time"``: lags are multiples ``lag_steps`` of the field's time
    spacing at point ``point``; moments pool all windows starting at or
    after ``start_index``.  ``mode="space"``: ``space_points[0]`` is the base
    point and the others are at increasing distances from it; increments are
    taken at ``time_index``.  A non-monotone moment ladder returns no exponent.
    """
    if n < 1:
        raise DomainError("moment order n must be >= 1")
    S = field.samples
    if mode == "time":
        if lag_steps is None:
            lag_steps = [1, 2, 4, 8, 16]
        if len(lag_steps) < 4:
            raise DomainError("need a lag ladder with at least 4 levels")
        dt = float(np.diff(field.times).mean())
        lags, moments, ses = [], [], []
        series = S[:, :, point]
        for j in lag_steps:
            if start_index + j >= series.shape[1]:
                raise DomainError("lag exceeds the recorded time window")
            inc = series[:, start_index + j :] - series[:, start_index : series.shape[1] - j]
            per_rep = np.mean(np.abs(inc) ** (2 * n), axis=1)
            lags.append(j * dt)
            moments.append(per_rep.mean())
            ses.append(per_rep.std(ddof=1) / math.sqrt(len(per_rep)) if len(per_rep) > 1 else 0.0)
        return _fit(lags, moments, n, "time", ses)
    if mode == "space":
        if space_points is None or len(space_points) < 5:
            raise DomainError("space mode needs a base point and at least 4 lag points")
        base = space_points[0]
        lags, moments, ses = [], [], []
        order = sorted(space_points[1:], key=lambda p: np.linalg.norm(field.points[p] - field.points[base]))
        for p in order:
            inc = S[:, time_index, p] - S[:, time_index, base]
            vals = np.abs(inc) ** (2 * n)
            lags.append(float(np.linalg.norm(field.points[p] - field.points[base])))
            moments.append(vals.mean())
            ses.append(vals.std(ddof=1) / math.sqrt(len(vals)) if len(vals) > 1 else 0.0)
        return _fit(lags, moments, n, "space", ses)
    raise DomainError(f"unknown mode {mode!r}")


def brownian_field(times, replicas: int, rng: np.random.Generator) -> LocalTimeField:
    """Standard Brownian paths on ``times`` as a calibration field."""
    times = np.asarray(times, dtype=float)
    dt = np.diff(times)
    inc = rng.standard_normal((replicas, len(dt))) * np.sqrt(dt)
    paths = np.concatenate([np.zeros((replicas, 1)), np.cumsum(inc, axis=1)], axis=1)
    return LocalTimeField(times, np.zeros((1, 1)), paths[:, :, None], None, None, "brownian")
