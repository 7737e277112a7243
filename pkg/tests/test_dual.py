from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import mixture_heat_pairing, second_moment_one_jump_1d
from sdsmlab.cloud import ParticleCloud
from sdsmlab.dual import (
    DualState,
    apply_jump,
    choose_pair,
    duality_check,
    duality_rhs,
    evolve,
    fidelity_trials,
    jump_times,
    occupation_integral,
    particle_moment,
    run_dual,
)
from sdsmlab.errors import ConfigError, DomainError
from sdsmlab.kernels import KernelModel, gaussian_density
from sdsmlab.measures import GaussianMixture
from sdsmlab.particle import SimConfig
from sdsmlab.stats import MeanSE

bandwidths = st.floats(min_value=0.05, max_value=5.0)


class TestDualState:
    def test_validation(self):
        with pytest.raises(DomainError):
            DualState([1.0, 2.0], [[0.0]])
        with pytest.raises(DomainError):
            DualState([0.0], [[0.0]])

    def test_evaluation_and_log(self):
        f = DualState.product([0.5, 2.0], [[0.0, 1.0], [1.0, -1.0]])
        y = np.array([[0.3, 0.2], [0.1, 0.0]])
        direct = gaussian_density(0.5, y[0] - [0.0, 1.0]) * gaussian_density(2.0, y[1] - [1.0, -1.0])
        assert f(y) == pytest.approx(direct, rel=1e-14)
        assert f.log_value(y) == pytest.approx(math.log(direct), rel=1e-14)

    def test_pair_product_factorizes(self):
        mu = GaussianMixture.single(1, 2.0, 0.5)
        f = DualState.product([1.0, 0.3], [[0.2], [-0.4]])
        expected = mixture_heat_pairing([2.0], [[0.0]], [0.5], [0.2], 1.0, 0.0) * mixture_heat_pairing([2.0], [[0.0]], [0.5], [-0.4], 0.3, 0.0)
        assert f.pair_product(mu) == pytest.approx(expected, rel=1e-13)


class TestJump:
    @given(u=bandwidths, v=bandwidths)
    def test_same_center_merge(self, u, v):
        f = DualState.product([u, v], [[0.3, 0.3], [0.3, 0.3]])
        g = apply_jump(f, 0, 1)
        assert g.J == 1
        assert g.bandwidths[0] == pytest.approx(u * v / (u + v), rel=1e-14)
        assert math.exp(g.log_prefactor) == pytest.approx((2 * math.pi * (u + v)) ** -1, rel=1e-12)

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_equal_bandwidths(self, d):
        f = DualState(np.array([0.8, 0.8]), np.zeros((2, d)))
        g = apply_jump(f, 1, 0)
        assert g.bandwidths[0] == pytest.approx(0.4)
        assert math.exp(g.log_prefactor) == pytest.approx((4 * math.pi * 0.8) ** (-d / 2))

    def test_single_coordinate_cannot_jump(self):
        g = apply_jump(DualState.product([1.0, 1.0], [[0.0], [1.0]]), 0, 1)
        with pytest.raises(DomainError):
            apply_jump(g, 0, 0)

    def test_invalid_pair(self):
        with pytest.raises(DomainError):
            apply_jump(DualState.product([1.0, 1.0, 1.0], [[0.0], [1.0], [2.0]]), 1, 1)

    @given(u=bandwidths, v=bandwidths, w=bandwidths, y=st.floats(-3, 3), z=st.floats(-3, 3))
    @settings(max_examples=100)
    def test_merged_state_is_diagonal_restriction(self, u, v, w, y, z):
        f = DualState.product([u, v, w], [[0.5], [-0.2], [1.0]])
        g = apply_jump(f, 0, 2)
        lhs = g.log_value(np.array([[y], [z]]))
        rhs = f.log_value(np.array([[y], [z], [y]]))
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)

    def test_fidelity_trials(self):
        assert fidelity_trials(2000, np.random.default_rng(0)) <= 1e-12


class TestEvolve:
    def test_zero_time_identity(self):
        f = DualState.product([1.0], [[0.0]])
        assert evolve(f, 0.0) is f

    @given(a=st.floats(0, 3), b=st.floats(0, 3))
    def test_semigroup(self, a, b):
        f = DualState.product([0.4, 1.1], [[0.0], [1.0]])
        np.testing.assert_allclose(evolve(evolve(f, a), b).bandwidths, evolve(f, a + b).bandwidths, rtol=1e-15)

    def test_single_factor_heat_flow(self):
        f = evolve(DualState.product([0.7], [[0.2]]), 0.5)
        assert f.bandwidths[0] == pytest.approx(1.2)

    def test_negative_time(self):
        with pytest.raises(DomainError):
            evolve(DualState.product([1.0], [[0.0]]), -0.1)


class TestJumpTimes:
    def test_single_coordinate_never_jumps(self):
        rng = np.random.default_rng(0)
        assert all(jump_times(1, 5.0, 10.0, rng) == [] for _ in range(100))

    def test_no_branching_no_jumps(self):
        assert jump_times(4, 0.0, 10.0, np.random.default_rng(0)) == []

    def test_two_coordinate_wait_is_exponential(self):
        rng = np.random.default_rng(1)
        gs2 = 2.5
        waits = np.array([jump_times(2, gs2, 1e9, rng)[0] for _ in range(100_000)])
        est = MeanSE.of(waits)
        assert abs(est.mean - 1 / gs2) <= 3 * est.se

    def test_times_increase_and_count(self):
        ts = jump_times(5, 3.0, 100.0, np.random.default_rng(2))
        assert len(ts) == 4 and ts == sorted(ts)

    def test_occupation_integral_piecewise(self):
        assert occupation_integral(3, [0.5, 1.0], 2.0) == pytest.approx(6 * 0.5 + 2 * 0.5 + 0.0)
        assert occupation_integral(2, [], 1.5) == pytest.approx(3.0)

    def test_choose_pair_uniform(self):
        rng = np.random.default_rng(3)
        counts = {}
        for _ in range(24_000):
            p = choose_pair(4, rng)
            counts[p] = counts.get(p, 0) + 1
        assert len(counts) == 12 and all(i != j for i, j in counts)
        freq = np.array(list(counts.values())) / 24_000
        assert np.all(np.abs(freq - 1 / 12) < 4 * math.sqrt(1 / 12 * 11 / 12 / 24_000))

    def test_weight_at_least_one(self):
        rng = np.random.default_rng(4)
        f = DualState.product([1.0, 1.0, 1.0], [[0.0], [0.0], [0.0]])
        mu = GaussianMixture.single(1)
        assert all(run_dual(f, mu, 1.0, 2.0, rng).log_weight >= 0 for _ in range(50))


class TestDualityRHS:
    def test_m1_exact(self):
        mu = GaussianMixture([1.0, 0.5], [[0.0, 0.0], [1.0, 1.0]], [1.0, 0.2])
        f = DualState.product([0.5], [[0.3, -0.1]])
        res = duality_rhs(f, mu, 0.7, 1.0, 10)
        assert res.se == 0.0
        expected = mixture_heat_pairing([1.0, 0.5], [[0.0, 0.0], [1.0, 1.0]], [1.0, 0.2], [0.3, -0.1], 0.5, 0.7)
        assert res.mean == pytest.approx(expected, rel=1e-13)

    def test_m2_short_time(self):
        mu = GaussianMixture.single(1, 2.0)
        f = DualState.product([1.0, 1.0], [[0.5], [-0.5]])
        res = duality_rhs(f, mu, 1e-9, 1.0, 200)
        assert res.mean == pytest.approx(f.pair_product(mu), rel=1e-6)

    def test_m2_against_quadrature(self):
        mu = GaussianMixture.single(1)
        f = DualState.product([1.0, 1.0], [[0.4], [-0.6]])
        res = duality_rhs(f, mu, 0.5, 1.0, 20_000, seed=8)
        oracle = second_moment_one_jump_1d(1.0, 0.0, 1.0, (0.4, -0.6), (1.0, 1.0), 0.5, 1.0)
        assert abs(res.mean - oracle) <= 3 * res.se

    def test_negative_time(self):
        with pytest.raises(DomainError):
            duality_rhs(DualState.product([1.0], [[0.0]]), GaussianMixture.single(1), -1.0, 1.0, 10)


class TestParticleSide:
    def test_particle_moment_brute_force(self):
        rng = np.random.default_rng(0)
        cloud = ParticleCloud(rng.standard_normal((7, 1)), rng.uniform(0.1, 1.0, 7))
        f = DualState.product([0.5, 1.5], [[0.1], [-0.3]])
        brute = sum(
            cloud.masses[i] * cloud.masses[j] * f(np.array([cloud.positions[i], cloud.positions[j]]))
            for i in range(7)
            for j in range(7)
        )
        assert particle_moment(cloud, f) == pytest.approx(brute, rel=1e-12)

    def test_no_branching_products(self):
        cfg = SimConfig(KernelModel.standard(1), GaussianMixture.single(1, 2.0), 100, 0.05, 0.5, gamma=0.0, seed=1)
        f = DualState.product([1.0, 0.5], [[0.3], [-0.3]])
        rep = duality_check(f, cfg, 300)
        a = mixture_heat_pairing([2.0], [[0.0]], [1.0], [0.3], 1.0, 0.5)
        b = mixture_heat_pairing([2.0], [[0.0]], [1.0], [-0.3], 0.5, 0.5)
        assert rep.rhs == pytest.approx(a * b, rel=1e-12)
        assert rep.rhs_se == 0.0
        assert rep.passed

    def test_standard_kernel_required(self):
        cfg = SimConfig(KernelModel.gaussian_interaction(1), GaussianMixture.single(1, 2.0), 10, 0.05, 0.1)
        with pytest.raises(ConfigError):
            duality_check(DualState.product([1.0], [[0.0]]), cfg, 2)
