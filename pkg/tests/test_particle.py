from __future__ import annotations

import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import mixture_heat_pairing
from sdsmlab import kernels
from sdsmlab.cloud import ParticleCloud
from sdsmlab.errors import ConfigError
from sdsmlab.kernels import KernelModel
from sdsmlab.measures import Dirac, GaussianMixture, LebesgueWindow
from sdsmlab.particle import (
    ConstantTest,
    GaussianTest,
    SimConfig,
    branch_step,
    common_quadratic_form,
    diffuse_step,
    generator_G1,
    pair_empirical,
    run_sdsm,
    sample_step_increments,
    spde_decomposition,
    spde_qv_check,
)
from sdsmlab.stats import MeanSE, replica_rng


def _cloud(points, mass=1.0):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return ParticleCloud(points, np.full(points.shape[0], mass))


class TestSimConfig:
    def test_dimension_mismatch(self):
        with pytest.raises(ConfigError) as exc:
            SimConfig(KernelModel.standard(2), GaussianMixture.single(1), 10, 0.1, 1.0)
        assert exc.value.pointer == "/initial_measure"

    def test_horizon_on_grid(self):
        with pytest.raises(ConfigError) as exc:
            SimConfig(KernelModel.standard(1), GaussianMixture.single(1), 10, 0.3, 1.0)
        assert exc.value.pointer == "/horizon"

    def test_snapshots_increasing(self):
        with pytest.raises(ConfigError) as exc:
            SimConfig(KernelModel.standard(1), GaussianMixture.single(1), 10, 0.1, 1.0, snapshots=(0.5, 0.2))
        assert exc.value.pointer == "/snapshots"

    def test_branching_probability_guard(self):
        with pytest.raises(ConfigError) as exc:
            SimConfig(KernelModel.standard(1), GaussianMixture.single(1, 1.0), 1000, 0.01, 0.1)
        assert exc.value.pointer == "/dt"

    def test_dirac_needs_waiver(self):
        cfg = SimConfig(KernelModel.standard(1), Dirac([0.0], 10.0), 10, 0.1, 0.2)
        with pytest.raises(ConfigError):
            run_sdsm(cfg)
        waived = SimConfig(KernelModel.standard(1), Dirac([0.0], 10.0), 10, 0.1, 0.2, waive_hypotheses=True)
        assert run_sdsm(waived).final.dimension == 1

    def test_round_trip(self):
        cfg = SimConfig(KernelModel.gaussian_interaction(2, 0.5), GaussianMixture.single(2, 3.0), 50, 0.01, 0.1, snapshots=(0.0, 0.1), seed=4)
        again = SimConfig.from_dict(cfg.to_dict())
        assert again.config_hash() == cfg.config_hash()


class TestDiffuseStep:
    def test_standard_increments_iid(self):
        rng = np.random.default_rng(0)
        cloud = _cloud(rng.standard_normal((20_000, 2)))
        moved, rec = diffuse_step(cloud, KernelModel.standard(2), 0.04, rng)
        np.testing.assert_array_equal(rec.common, 0.0)
        inc = moved.positions - cloud.positions
        cov = np.cov(inc.T)
        np.testing.assert_allclose(cov, 0.04 * np.eye(2), atol=5 * 0.04 * math.sqrt(2 / 20_000))

    def test_coincident_particles_share_common_noise(self):
        model = KernelModel.gaussian_interaction(1, 1.0)
        pos = np.zeros((2, 1))
        common, _ = sample_step_increments(model, pos, 0.1, np.random.default_rng(1), size=50_000)
        np.testing.assert_array_equal(common[:, 0], common[:, 1])
        var = common[:, 0, 0].var()
        expected = 0.1 * float(kernels.rho(model, np.zeros(1))[0, 0])
        assert var == pytest.approx(expected, rel=4 * math.sqrt(2 / 50_000))

    def test_two_particle_covariance_d1(self):
        model = KernelModel.gaussian_interaction(1, 1.0)
        pos = np.array([[0.0], [0.7]])
        n, dt = 100_000, 0.05
        common, _ = sample_step_increments(model, pos, dt, np.random.default_rng(2), size=n)
        prod = common[:, 0, 0] * common[:, 1, 0]
        est = MeanSE.of(prod)
        target = float(kernels.gaussian_density(2.0, np.array([0.7]))) * dt
        assert abs(est.mean - target) <= 3 * est.se

    def test_table_kernel_uses_general_factorization(self):
        g = np.linspace(-4, 4, 33)
        X, Y = np.meshgrid(g, g, indexing="ij")
        vals = np.stack([np.exp(-(X**2 + Y**2)), 0.5 * np.exp(-(X**2 + Y**2) / 2)])
        model = KernelModel(2, "table", {"lower": [-4.0, -4.0], "upper": [4.0, 4.0], "values": vals.tolist()})
        pos = np.array([[0.0, 0.0], [0.5, 0.0]])
        n, dt = 60_000, 0.1
        common, _ = sample_step_increments(model, pos, dt, np.random.default_rng(3), size=n)
        flat = common.reshape(n, 4)
        emp = flat.T @ flat / n
        target = kernels.common_covariance(model, pos) * dt
        se = np.sqrt(np.var(flat[:, :, None] * flat[:, None, :], axis=0) / n)
        assert np.all(np.abs(emp - target) <= 4 * se + 1e-15)


class TestBranchStep:
    def test_no_branching(self):
        cloud = _cloud(np.zeros((5, 1)))
        new, off, ev_pos, ev = branch_step(cloud, 0.0, 1.0, 0.1, np.random.default_rng(0))
        assert new is cloud
        assert np.all(off == 1) and len(ev) == 0

    def test_offspring_values_and_events(self):
        cloud = _cloud(np.random.default_rng(0).standard_normal((1000, 2)), 0.01)
        new, off, ev_pos, ev = branch_step(cloud, 1.0, 1.0, 0.004, np.random.default_rng(1))
        assert set(np.unique(off)) <= {0, 1, 2}
        assert new.alive == int(off.sum())
        assert np.all(np.abs(ev) == 0.01)
        assert new.total_mass == pytest.approx(cloud.total_mass + ev.sum())

    def test_mass_increment_moments(self):
        # mean zero, variance gamma sigma2 <1, mu> m ... summed: gs2 * M * dt
        n, m, dt, gs2 = 400, 0.01, 0.002, 1.5
        cloud = _cloud(np.zeros((n, 1)), m)
        incs = []
        for r in range(4000):
            new, *_ = branch_step(cloud, gs2, 1.0, dt, replica_rng(11, r))
            incs.append(new.total_mass - cloud.total_mass)
        incs = np.array(incs)
        mean = MeanSE.of(incs)
        assert abs(mean.mean) <= 3 * mean.se
        var = MeanSE.of(incs**2)
        assert abs(var.mean - gs2 * n * m * dt) <= 3 * var.se

    def test_probability_guard(self):
        with pytest.raises(ConfigError):
            branch_step(_cloud(np.zeros((3, 1)), 0.001), 1.0, 1.0, 0.1, np.random.default_rng(0))


class TestRunSDSM:
    cfg = SimConfig(KernelModel.gaussian_interaction(2, 1.0), GaussianMixture.single(2, 2.0), 60, 0.01, 0.1, snapshots=(0.0, 0.05, 0.1), seed=9)

    def test_deterministic(self):
        assert run_sdsm(self.cfg, 3).hash() == run_sdsm(self.cfg, 3).hash()
        assert run_sdsm(self.cfg, 3).hash() != run_sdsm(self.cfg, 4).hash()

    def test_snapshots_and_records(self):
        path = run_sdsm(self.cfg, 0)
        np.testing.assert_allclose(path.times, [0.0, 0.05, 0.1])
        assert len(path.steps) == 10
        states = path.states()
        assert len(states) == 11
        assert states[-1][0] == pytest.approx(0.1)
        t, _, dm = path.events.arrays()
        assert np.all((t > 0) & (t <= 0.1 + 1e-12))
        # consecutive records agree with the recorded moves and offspring
        for a, b in zip(path.steps, path.steps[1:]):
            np.testing.assert_array_equal(np.repeat(a.moved, a.offspring, axis=0), b.positions)

    def test_stream_callback_sees_every_step(self):
        seen = []
        run_sdsm(self.cfg, 0, on_step=lambda rec, cloud: seen.append(cloud.alive))
        assert len(seen) == 10

    def test_independent_brownian_paths(self):
        cfg = SimConfig(KernelModel.standard(1), Dirac([0.5], 1.0), 20_000, 0.05, 0.5, gamma=0.0, waive_hypotheses=True)
        final = run_sdsm(cfg).final.positions[:, 0]
        assert abs(final.mean() - 0.5) < 3 * math.sqrt(0.5 / 20_000)
        assert final.var() == pytest.approx(0.5, rel=4 * math.sqrt(2 / 20_000))

    def test_first_moment_and_mass_martingale(self):
        cfg = SimConfig(KernelModel.standard(2), GaussianMixture.single(2, 3.0, 0.5), 150, 0.01, 0.3, seed=2)
        f = GaussianTest([0.4, -0.2], 0.6)
        vals, masses = [], []
        for r in range(150):
            p = run_sdsm(cfg, r, check=False)
            vals.append(pair_empirical(p.final, f))
            masses.append(p.final.total_mass - p.initial.total_mass)
        est = MeanSE.of(vals)
        exact = mixture_heat_pairing([3.0], [[0.0, 0.0]], [0.5], [0.4, -0.2], 0.6, 0.3)
        assert abs(est.mean - exact) <= 3 * est.se
        drift = MeanSE.of(masses)
        assert abs(drift.mean) <= 3 * drift.se

    def test_write_csv(self, tmp_path):
        path = run_sdsm(self.cfg, 1)
        path.write_csv(tmp_path / "p.csv", tmp_path / "e.csv")
        rows = list(csv.reader(open(tmp_path / "p.csv")))
        assert rows[0] == ["snapshot_time", "particle_index", "x1", "x2", "mass"]
        assert len(rows) - 1 == sum(c.alive for c in path.clouds)
        first = path.clouds[0]
        assert float(rows[1][2]) == first.positions[0, 0]
        ev = list(csv.reader(open(tmp_path / "e.csv")))
        assert len(ev) - 1 == len(path.events)


class TestPairEmpirical:
    def test_constant_is_total_mass(self):
        cloud = _cloud(np.random.default_rng(0).standard_normal((7, 2)), 0.3)
        assert pair_empirical(cloud, lambda x: np.ones(len(x))) == pytest.approx(2.1)

    def test_single_particle(self):
        cloud = ParticleCloud(np.array([[0.2, 0.3]]), np.array([2.0]))
        f = GaussianTest([0.0, 0.0], 1.0)
        assert pair_empirical(cloud, f) == pytest.approx(2.0 * float(f(np.array([[0.2, 0.3]]))[0]))

    @given(a=st.floats(-3, 3), b=st.floats(-3, 3))
    @settings(max_examples=30)
    def test_linear(self, a, b):
        cloud = _cloud(np.linspace(-1, 1, 9)[:, None], 0.5)
        f, g = np.sin, np.cos
        lhs = pair_empirical(cloud, lambda x: a * f(x[:, 0]) + b * g(x[:, 0]))
        rhs = a * pair_empirical(cloud, lambda x: f(x[:, 0])) + b * pair_empirical(cloud, lambda x: g(x[:, 0]))
        assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_empty(self):
        assert pair_empirical(ParticleCloud.empty(2), np.ones) == 0.0


class TestSPDE:
    def test_constant_function_has_no_drift(self):
        model = KernelModel.gaussian_interaction(2, 1.0)
        x = np.random.default_rng(0).standard_normal((5, 2))
        np.testing.assert_array_equal(generator_G1(model, ConstantTest(), x), 0.0)

    def test_constant_function_reduces_to_mass(self):
        cfg = SimConfig(KernelModel.gaussian_interaction(2, 1.0), GaussianMixture.single(2, 2.0), 60, 0.01, 0.1)
        path = run_sdsm(cfg)
        rep = spde_decomposition(path, ConstantTest(), cfg.model, 1.0, 1.0)
        assert rep.D == pytest.approx(path.final.total_mass - path.initial.total_mass, abs=1e-12)
        assert rep.qv_env == 0.0 and rep.qv_individual == 0.0

    def test_generator_matches_finite_differences(self):
        model = KernelModel.gaussian_interaction(2, 0.7, amplitude=[1.0, 0.5])
        phi = GaussianTest([0.1, 0.2], 0.8)
        x = np.array([[0.3, -0.4]])
        sig = model.sigma
        h = 1e-4
        hess = np.zeros((2, 2))
        for i, ei in enumerate(np.eye(2)):
            for j, ej in enumerate(np.eye(2)):
                hess[i, j] = (phi.value(x + h * ei + h * ej) - phi.value(x + h * ei - h * ej) - phi.value(x - h * ei + h * ej) + phi.value(x - h * ei - h * ej))[0] / (4 * h * h)
        assert generator_G1(model, phi, x)[0] == pytest.approx(0.5 * np.sum(sig * hess), rel=1e-6)

    def test_quadratic_form_matches_dense_covariance(self):
        model = KernelModel.gaussian_interaction(2, 0.5, amplitude=[1.0, -0.3])
        rng = np.random.default_rng(5)
        pos = rng.standard_normal((6, 2))
        g = rng.standard_normal((6, 2))
        dense = kernels.common_covariance(model, pos)
        assert common_quadratic_form(model, pos, g) == pytest.approx(g.ravel() @ dense @ g.ravel(), rel=1e-10)

    def test_independent_diffusions(self):
        # gamma = 0, h = 0: D is the individual-noise martingale only
        cfg = SimConfig(KernelModel.standard(2), GaussianMixture.single(2, 1.0), 40, 0.02, 0.2, gamma=0.0, seed=4)
        rep = spde_qv_check((run_sdsm(cfg, r, check=False) for r in range(1000)), GaussianTest([0.0, 0.0], 0.5), cfg.model, 0.0, 1.0)
        assert rep.components["qv_branch"] == 0.0 and rep.components["qv_env"] == 0.0
        assert rep.passed

    def test_keep_steps_required(self):
        cfg = SimConfig(KernelModel.standard(1), GaussianMixture.single(1), 10, 0.1, 0.2, gamma=0.0, keep_steps=False)
        with pytest.raises(ConfigError):
            spde_decomposition(run_sdsm(cfg), ConstantTest(), cfg.model, 1.0, 1.0)


def test_window_initial_measure_runs():
    cfg = SimConfig(KernelModel.standard(1), LebesgueWindow([0.0], [1.0], 5.0), 30, 0.01, 0.05)
    path = run_sdsm(cfg)
    assert path.initial.total_mass == pytest.approx(5.0)
