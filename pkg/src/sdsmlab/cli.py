"""Command-line experiment runner.

``sdsmlab <command> --config PATH [--out DIR] [--seed N] [--threads N] [--replicas N]``

Commands: ``validate``, ``simulate``, ``duality``, ``localtime``, ``holder``
and ``kernel-checks``.  Each writes ``report.json`` (a :class:`RunReport`)
plus command-specific CSV/JSON data into the output directory.  The exit
status is 0 when every check passes, 1 when some check fails (or a
numerical error stops the run) and 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from scipy import stats

from . import __version__, dual, kernels, localtime as lt, measures
from .config import ExperimentConfig
from .errors import ConfigError, ModelRejected, SDSMError
from .particle import SimConfig, run_sdsm, validate_sim_config
from .stats import MeanSE, z_score

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
# Spawn key of the Brownian calibration stream.  Replica streams use one-element
# keys (see stats.replica_rng), so a two-element key can never coincide with one.
SHIM_SPAWN_KEY = (0xB0B, 0)

log = logging.getLogger("sdsmlab")


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def _jsonable(v: Any) -> Any:
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return v


@dataclass
class Check:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "pass": bool(self.passed), **_jsonable(self.details)}


@dataclass
class RunReport:
    """Per-check outcomes plus provenance of one command invocation."""

    command: str
    config_hash: str
    seed: int
    replicas: int
    checks: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    wall_clock: float = 0.0
    version: str = __version__

    def add(self, name: str, passed: bool, **details) -> Check:
        if any(c.name == name for c in self.checks):
            raise ValueError(f"check {name!r} reported twice")
        chk = Check(name, bool(passed), details)
        self.checks.append(chk)
        log.info("check %s: %s", name, "PASS" if passed else "FAIL")
        return chk

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "tool": "sdsmlab",
            "version": self.version,
            "command": self.command,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "replicas": self.replicas,
            "wall_clock_s": self.wall_clock,
            "pass": self.passed,
            "checks": [c.to_dict() for c in self.checks],
            "outputs": list(self.outputs),
        }

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Replica-level parallelism
# ---------------------------------------------------------------------------


def replica_chunks(replicas: int, threads: int) -> list[tuple[int, int]]:
    """Contiguous ``(first, count)`` blocks covering ``range(replicas)``."""
    threads = max(1, min(threads, replicas))
    base, extra = divmod(replicas, threads)
    out, first = [], 0
    for k in range(threads):
        n = base + (1 if k < extra else 0)
        out.append((first, n))
        first += n
    return out


def map_chunks(func: Callable, chunks: Sequence[tuple[int, int]], threads: int, *args) -> list:
    """Apply ``func(first, count, *args)`` to each chunk; results in chunk order."""
    if threads <= 1 or len(chunks) == 1:
        return [func(a, b, *args) for a, b in chunks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(func, a, b, *args) for a, b in chunks]
        return [f.result() for f in futures]


def _ensemble_chunk(first: int, count: int, sim: SimConfig, kwargs: dict) -> lt.LocalTimeEnsemble:
    return lt.run_local_time_ensemble(sim, count, first_replica=first, **kwargs)


def run_ensemble(sim: SimConfig, replicas: int, threads: int, **kwargs) -> lt.LocalTimeEnsemble:
    parts = map_chunks(_ensemble_chunk, replica_chunks(replicas, threads), threads, sim, kwargs)
    return lt.combine_ensembles(parts)


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


def cmd_validate(cfg: ExperimentConfig, out: Path, threads: int) -> RunReport:
    rep = _new_report("validate", cfg)
    model, mu = cfg.model(), cfg.initial_measure()
    if model.dimension != mu.dimension:
        raise ConfigError("model and initial measure dimensions differ", "/initial_measure")
    sec = cfg.section("validate")
    t = float(sec.get("t", cfg.doc.get("horizon", 1.0) or 1.0))
    a = float(sec.get("a", model.dimension + 1))
    configs = kernels.random_configurations(model.dimension, 4, 60, np.random.default_rng(20240607))
    try:
        lo, hi = kernels.check_ellipticity(model, configs)
        rep.add("ellipticity", True, lambda_min=lo, lambda_max=hi)
    except ModelRejected as exc:
        rep.add("ellipticity", False, reason=str(exc))
    ups = measures.upsilon(mu, t)
    rep.add("upsilon_finite", ups.is_finite, upsilon=ups.to_json(), t=t)
    member = measures.pair(mu, measures.MollifierField(a, np.zeros(mu.dimension)))
    rep.add("mollifier_membership", member.is_finite, a=a, value=member.to_json())
    ui = measures.check_uniform_integ(mu, a)
    rep.add("uniform_integrability", ui.is_finite, a=a, value=ui.to_json())
    return rep


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _simulate_chunk(first: int, count: int, sim: SimConfig, out: str, probe: tuple | None) -> list:
    rows = []
    for r in range(first, first + count):
        path = run_sdsm(sim, r, check=False)
        path.write_csv(Path(out) / "paths" / f"replica_{r:05d}.csv", Path(out) / "paths" / f"events_{r:05d}.csv")
        masses = [float(c.masses.sum()) for c in path.clouds]
        pairing = None
        if probe is not None:
            s, c = probe
            pairing = float(path.final.pair(lambda x: np.atleast_1d(kernels.gaussian_density(s, x - c))))
        rows.append((r, masses, pairing, path.hash(), float(path.initial.masses.sum())))
    return rows


def cmd_simulate(cfg: ExperimentConfig, out: Path, threads: int) -> RunReport:
    rep = _new_report("simulate", cfg)
    sim = cfg.sim_config()
    if not sim.snapshots:
        sim = cfg.sim_config(snapshots=(0.0, sim.horizon) if sim.horizon > 0 else (0.0,))
    sim = _replace_sim(sim, keep_steps=False)
    lam = validate_sim_config(sim)
    rep.add("ellipticity", True, lambda_min=lam[0], lambda_max=lam[1])
    (out / "paths").mkdir(parents=True, exist_ok=True)
    sig = sim.model.sigma
    mu0 = sim.initial_measure
    probe = (1.0, np.zeros(sim.model.dimension)) if isinstance(mu0, measures.GaussianMixture) else None
    rows = [row for chunk in map_chunks(_simulate_chunk, replica_chunks(cfg.replicas, threads), threads, sim, str(out), probe) for row in chunk]
    with open(out / "mass.csv", "w") as fh:
        fh.write("replica,snapshot_time,total_mass\n")
        for r, masses, *_ in rows:
            for t, m in zip(sim.snapshots, masses):
                fh.write(f"{r},{'%.17g' % t},{'%.17g' % m}\n")
    rep.outputs += ["paths/", "mass.csv"]
    if cfg.replicas >= 2:
        zs = []
        for k, t in enumerate(sim.snapshots):
            est = MeanSE.of([row[1][k] - row[4] for row in rows])
            zs.append(z_score(est.mean, est.se))
        rep.add("criticality", all(abs(z) <= 3.0 for z in zs), z_scores=zs, snapshots=list(sim.snapshots))
        if probe is not None:
            s, c = probe
            est = MeanSE.of([row[2] for row in rows])
            eye = np.eye(sim.model.dimension)
            exact = float(sum(
                w * stats.multivariate_normal.pdf(c - ck, cov=(s + b) * eye + sim.horizon * sig)
                for w, ck, b in zip(mu0.weights, mu0.centers, mu0.bandwidths)
            ))
            z = z_score(est.mean - exact, est.se)
            rep.add("first_moment", abs(z) <= 3.0, particle=est.mean, particle_se=est.se, exact=exact, z_score=z)
    again = run_sdsm(sim, rows[0][0], check=False).hash()
    rep.add("determinism", again == rows[0][3], replica=rows[0][0], hash=rows[0][3])
    return rep


def _replace_sim(sim: SimConfig, **changes) -> SimConfig:
    return dataclasses.replace(sim, **changes)


# ---------------------------------------------------------------------------
# duality
# ---------------------------------------------------------------------------


def _duality_chunk(first: int, count: int, sim: SimConfig, f: dual.DualState) -> list:
    return [dual.particle_moment(run_sdsm(sim, r, check=False).final, f) for r in range(first, first + count)]


def cmd_duality(cfg: ExperimentConfig, out: Path, threads: int) -> RunReport:
    rep = _new_report("duality", cfg)
    sec = cfg.section("duality")
    if "duality" not in cfg.doc:
        raise ConfigError("required for this command", "/duality")
    base = cfg.sim_config()
    m = int(sec["m"])
    t = float(sec.get("t", base.horizon))
    gs2 = float(sec.get("gamma_sigma2", base.gamma_sigma2))
    centers = np.asarray(sec["f"]["centers"], dtype=float)
    bws = np.asarray(sec["f"]["bandwidths"], dtype=float)
    if centers.shape != (m, base.model.dimension) or bws.shape != (m,):
        raise ConfigError("need m centers of the model dimension and m bandwidths", "/duality/f")
    if not base.model.is_standard:
        raise ConfigError("the exact dual covers the standard kernel only", "/model")
    f = dual.DualState(bws, centers)
    sim = _replace_sim(base, horizon=t, gamma=gs2, sigma2=1.0, snapshots=(), keep_steps=False)
    validate_sim_config(sim)
    replicas = int(sec.get("replicas", cfg.replicas))
    vals = [v for chunk in map_chunks(_duality_chunk, replica_chunks(replicas, threads), threads, sim, f) for v in chunk]
    lhs = MeanSE.of(vals)
    rhs = dual.duality_rhs(f, sim.initial_measure, t, gs2, int(sec.get("dual_replicas", 100_000)), seed=cfg.seed + 1)
    report = dual.compare(lhs, rhs, float(sec.get("n_se", 3.0)), m=m, t=t)
    (out / "duality.json").write_text(json.dumps(_jsonable(report.to_dict()), indent=2, sort_keys=True) + "\n")
    rep.outputs.append("duality.json")
    rep.add(f"duality_m{m}", report.passed, **report.to_dict())
    if m == 1:
        # The m = 1 right-hand side is exact; confirm it against direct quadrature of <P_t f, mu0>.
        s, c = float(bws[0]), centers[0]
        quad = measures.pair(sim.initial_measure, lambda x: np.atleast_1d(kernels.gaussian_density(s + t, x - c)))
        rel = abs(quad.value - rhs.mean) / max(abs(rhs.mean), 1e-300) if quad.is_finite else math.inf
        rep.add("m1_rhs_quadrature", rhs.se == 0 and rel <= 1e-6, rhs=rhs.mean, quadrature=quad.to_json(), rel_error=rel)
    return rep


# ---------------------------------------------------------------------------
# localtime
# ---------------------------------------------------------------------------


def cmd_localtime(cfg: ExperimentConfig, out: Path, threads: int) -> RunReport:
    rep = _new_report("localtime", cfg)
    if "localtime" not in cfg.doc:
        raise ConfigError("required for this command", "/localtime")
    sec = cfg.section("localtime")
    sim = cfg.sim_config()
    d = sim.model.dimension
    points = np.asarray(sec["points"], dtype=float)
    if points.shape[1] != d:
        raise ConfigError("points must have the model dimension", "/localtime/points")
    lams = tuple(float(v) for v in sec.get("lambdas", (1.0, 2.0)))
    eps = tuple(float(v) for v in sec.get("eps", (0.0025,)))
    n_se = float(sec.get("n_se", 3.0))
    n_user = points.shape[0]
    tests, weights = (), None
    if "phi" in sec:
        ph = sec["phi"]
        bump = lt.Bump(np.asarray(ph["center"], dtype=float), float(ph["radius"]))
        if bump.center.shape[0] != d:
            raise ConfigError("bump center must have the model dimension", "/localtime/phi/center")
        nodes, w = lt.tensor_gauss_legendre(bump.center - bump.radius, bump.center + bump.radius, int(ph.get("nodes", 8)))
        weights = w * bump(nodes)
        points = np.vstack([points, nodes])
        tests = (bump,)
    ens = run_ensemble(sim, cfg.replicas, threads, points=points, lams=lams, eps=eps, record_every=int(sec.get("record_every", 1)), test_functions=tests)
    for l, lam in enumerate(lams):
        name = f"localtime_lambda{l}.csv"
        fld = ens.tanaka_field(l)
        lt.LocalTimeField(fld.times, fld.points[:n_user], fld.samples[..., :n_user], lam, fld.terms[..., :n_user, :]).write_csv(out / name)
        rep.outputs.append(name)
    for e, ep in enumerate(eps):
        name = f"occupation_eps{e}.csv"
        fld = ens.occupation_field(e)
        lt.LocalTimeField(fld.times, fld.points[:n_user], fld.samples[..., :n_user]).write_csv(out / name)
        rep.outputs.append(name)
    tan = ens.terms[:, -1, 0, :n_user].sum(axis=-1)
    if eps:
        e_min = int(np.argmin(eps))
        cmp_ = lt.compare_estimators(tan, ens.occupation[:, -1, e_min, :n_user], n_se)
        rep.add("tanaka_vs_occupation", cmp_.passed, eps=eps[e_min], tanaka=cmp_.mean_a, occupation=cmp_.mean_b, se_paired=cmp_.se_paired, se_combined=cmp_.se_combined, z=cmp_.z)
    if len(lams) >= 2:
        other = ens.terms[:, -1, 1, :n_user].sum(axis=-1)
        cmp_ = lt.compare_estimators(tan, other, n_se)
        rep.add("lambda_invariance", cmp_.passed, lambdas=lams[:2], mean_a=cmp_.mean_a, mean_b=cmp_.mean_b, se_paired=cmp_.se_paired, z=cmp_.z)
    se = tan.std(axis=0, ddof=1) / math.sqrt(tan.shape[0]) if tan.shape[0] > 1 else np.zeros(n_user)
    rep.add("tanaka_nonnegative", bool(np.all(tan.mean(axis=0) >= -n_se * se)), mean=tan.mean(axis=0), se=se)
    rep.add("clamp_fraction", ens.clamp_fraction < 1e-3, clamped=ens.clamped, evaluations=ens.evaluations, fraction=ens.clamp_fraction)
    if weights is not None:
        node_field = ens.tanaka_field(0)
        node_field = lt.LocalTimeField(node_field.times, points[n_user:], node_field.samples[..., n_user:], lams[0])
        res = lt.check_LT_identity(node_field, weights, ens.test_integrals[:, -1, 0], tolerance=float(sec.get("tolerance", 0.05)))
        details = res.to_dict()
        rep.add("lt_identity", details.pop("passed"), **details)
    return rep


# ---------------------------------------------------------------------------
# holder
# ---------------------------------------------------------------------------


def cmd_holder(cfg: ExperimentConfig, out: Path, threads: int) -> RunReport:
    rep = _new_report("holder", cfg)
    sec = cfg.section("holder")
    sim = cfg.sim_config()
    d = sim.model.dimension
    n = int(sec.get("n", 2))
    point = np.asarray(sec.get("point", [0.0] * d), dtype=float)
    direction = np.asarray(sec.get("direction", [1.0] + [0.0] * (d - 1)), dtype=float)
    if point.shape[0] != d or direction.shape[0] != d:
        raise ConfigError("point and direction must have the model dimension", "/holder")
    direction = direction / np.linalg.norm(direction)
    lag_steps = [int(v) for v in sec.get("lag_steps", (1, 2, 4, 8, 16))]
    space_lags = [float(v) for v in sec.get("space_lags", (0.0125, 0.025, 0.05, 0.1, 0.2))]
    start = int(round(float(sec.get("start_time", 0.2 * sim.horizon)) / sim.dt))
    lam = float(sec.get("lambda", 1.0))
    estimator = sec.get("estimator", "tanaka")
    eps = float(sec.get("eps", 0.0025))
    points = np.vstack([point, point + np.outer(space_lags, direction)])
    ens = run_ensemble(sim, cfg.replicas, threads, points=points, lams=(lam,), eps=(eps,) if estimator == "occupation" else (), record_every=1)
    fld = ens.tanaka_field(0) if estimator == "tanaka" else ens.occupation_field(0)

    shim_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed, spawn_key=SHIM_SPAWN_KEY)))
    shim = lt.brownian_field(fld.times, int(sec.get("shim_replicas", 2000)), shim_rng)
    shim_rep = lt.holder_estimate(shim, "time", n=n, lag_steps=lag_steps, start_index=start)
    time_rep = lt.holder_estimate(fld, "time", n=n, lag_steps=lag_steps, point=0, start_index=start)
    space_rep = lt.holder_estimate(fld, "space", n=n, space_points=list(range(len(points))))
    for name, r in (("holder_shim.json", shim_rep), ("holder_time.json", time_rep), ("holder_space.json", space_rep)):
        (out / name).write_text(json.dumps(_jsonable(r.to_dict()), indent=2, sort_keys=True) + "\n")
        rep.outputs.append(name)
    shim_ok = shim_rep.exponent is not None and 0.4 <= shim_rep.exponent <= 0.6
    rep.add("brownian_shim", shim_ok, exponent=shim_rep.exponent, band=[0.4, 0.6])
    t_ok = shim_ok and time_rep.exponent is not None and 0.35 <= time_rep.exponent <= 0.65
    rep.add("time_exponent", t_ok, exponent=time_rep.exponent, r2=time_rep.r2, monotone=time_rep.monotone, band=[0.35, 0.65], estimator=estimator)
    s_ok = space_rep.exponent is not None and 0.35 < space_rep.exponent < 1.15
    rep.add("space_exponent", s_ok, exponent=space_rep.exponent, r2=space_rep.r2, monotone=space_rep.monotone, band=[0.35, 1.15], estimator=estimator)
    return rep


# ---------------------------------------------------------------------------
# kernel-checks
# ---------------------------------------------------------------------------


def cmd_kernel_checks(cfg: ExperimentConfig, out: Path, threads: int) -> RunReport:
    rep = _new_report("kernel-checks", cfg)
    sec = cfg.section("kernel_checks")
    trials = int(sec.get("trials", 100_000))
    lam = float(sec.get("lambda", 1.0))
    rng = np.random.default_rng(cfg.seed)

    err = kernels.gaussian_product_trials(trials, rng)
    rep.add("gaussian_product_identity", err <= 1e-12, trials=trials, max_rel_error=err)
    err = dual.fidelity_trials(trials, rng)
    rep.add("dual_state_fidelity", err <= 1e-12, trials=trials, max_rel_error=err)

    radii = np.geomspace(0.01, 10.0, 25)
    k = math.sqrt(2 * lam)
    worst = 0.0
    for d, closed in ((1, np.exp(-k * radii) / k), (3, np.exp(-k * radii) / (2 * math.pi * radii))):
        xs = np.zeros((radii.size, d))
        xs[:, 0] = radii
        q = np.asarray(kernels.green_Q(lam, xs, method="quad"))
        worst = max(worst, float(np.max(np.abs(q / closed - 1.0))))
    rep.add("green_closed_forms", worst <= 1e-6, max_rel_error=worst)

    worst = 0.0
    for d in (1, 2, 3):
        xs = rng.standard_normal((6, d))
        xs *= np.exp(rng.uniform(np.log(0.1), np.log(3.0), (6, 1))) / np.linalg.norm(xs, axis=1, keepdims=True)
        g = np.asarray(kernels.grad_green(lam, xs, method="quad"))
        for i, x in enumerate(xs):
            h = 1e-5 * max(np.linalg.norm(x), 1.0)
            fd = np.array([(kernels.green_Q(lam, x + h * e, method="bessel") - kernels.green_Q(lam, x - h * e, method="bessel")) / (2 * h) for e in np.eye(d)])
            worst = max(worst, float(np.linalg.norm(g[i] - fd) / np.linalg.norm(fd)))
    rep.add("grad_green_finite_differences", worst <= 1e-4, max_rel_error=worst)

    lin, Ks, slopes = True, {}, {}
    for d in (1, 2, 3):
        xs = np.zeros((40, d))
        xs[:, 0] = np.geomspace(1e-3, 10.0, 40)
        res = kernels.check_square_vs_gtilde(lam, xs)
        lin = lin and res.linear_holds
        Ks[d], slopes[d] = res.K, res.small_radius_slope(1.0)
    ok = all(math.isfinite(v) for v in Ks.values()) and all(s >= -0.05 for s in slopes.values())
    rep.add("lemma_linear_ratio", lin, bound=max(1.0, lam**-0.5))
    rep.add("lemma_square_ratio", ok, K=Ks, small_radius_slope=slopes)

    sweeps = kernels.sweep_inequalities(int(sec.get("sweep_trials", 100_000)), rng)
    rep.add("inequality_gamma", sweeps["gamma"] == 0, violations=sweeps["gamma"])
    rep.add("inequality_mollifier_shift", sweeps["mollifier"] == 0, violations=sweeps["mollifier"])

    worst_lsu = 0.0
    ok = True
    ts = np.geomspace(1e-3, 10.0, 30)
    for d in (1, 2, 3):
        ys = rng.standard_normal((400, d)) * np.exp(rng.uniform(-3, 2, (400, 1)))
        for r, s in ((0, 0), (0, 1), (0, 2), (1, 0)):
            est, a2 = kernels.lsu_gaussian_check(r, s, ts, ys)
            sharp = kernels.lsu_gaussian_constant(r, s, d, a2)
            ok = ok and est <= sharp * (1 + 1e-9)
            worst_lsu = max(worst_lsu, est / sharp)
    rep.add("lsu_gaussian", ok, max_ratio_to_sharp_constant=worst_lsu)

    model = cfg.model() if "model" in cfg.doc else kernels.KernelModel.standard(1)
    b = kernels.aronson_constants(model)
    vals = [b.a1, b.a2, b.a_star, b.b, b.c_aron, b.A_star]
    rep.add("aronson_constants", all(v > 0 for v in vals), a1=b.a1, a2=b.a2, a_star=b.a_star, b=b.b, c=b.c_aron, A_star=b.A_star)
    return rep


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

HELP = {
    "validate": "check ellipticity and the initial-measure hypotheses",
    "simulate": "run particle replicas and export paths",
    "duality": "compare particle moments with the dual process",
    "localtime": "Tanaka and occupation local times with consistency checks",
    "holder": "Hoelder exponents of the local-time field",
    "kernel-checks": "exact identities, Green-function oracles and inequalities",
}

COMMANDS: dict[str, Callable[[ExperimentConfig, Path, int], RunReport]] = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "duality": cmd_duality,
    "localtime": cmd_localtime,
    "holder": cmd_holder,
    "kernel-checks": cmd_kernel_checks,
}


def _new_report(command: str, cfg: ExperimentConfig) -> RunReport:
    return RunReport(command, cfg.config_hash(), cfg.seed, cfg.replicas)


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment JSON document")
    common.add_argument("--out", type=Path, help="output directory (default: config 'out' or ./sdsm_out)")
    common.add_argument("--seed", type=_u64, help="global seed (overrides the config)")
    common.add_argument("--threads", type=_positive, default=1, help="worker processes for replica-level parallelism")
    common.add_argument("--replicas", type=_positive, help="replica count (overrides the config)")
    parser = argparse.ArgumentParser(prog="sdsmlab", description="SDSM stochastic-simulation lab")
    parser.add_argument("--version", action="version", version=f"sdsmlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name])
    return parser


def _configure_logging() -> None:
    level = os.environ.get("SDSMLAB_LOG", "error").strip().lower()
    if level not in LOG_LEVELS:
        raise ConfigError(f"SDSMLAB_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    log.setLevel(LOG_LEVELS[level])


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PASS if exc.code == 0 else EXIT_CONFIG
    try:
        _configure_logging()
        if args.config is None and args.command != "kernel-checks":
            raise ConfigError("--config is required for this command")
        if args.config is None:
            cfg = ExperimentConfig.from_dict({}, seed=args.seed, replicas=args.replicas, out=str(args.out) if args.out else None)
        else:
            cfg = ExperimentConfig.load(args.config, seed=args.seed, replicas=args.replicas, out=str(args.out) if args.out else None)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        report = COMMANDS[args.command](cfg, out, args.threads)
        report.wall_clock = time.perf_counter() - t0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SDSMError as exc:
        print(f"{type(exc).__module__}.{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    report.write(out / "report.json")
    for chk in report.checks:
        print(f"{'PASS' if chk.passed else 'FAIL'}  {chk.name}")
    print(f"report: {out / 'report.json'}")
    return EXIT_PASS if report.passed else EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
