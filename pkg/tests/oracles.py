"""Independent reference computations used by the test suite.

Nothing here imports the package under test: each oracle is a direct
numerical or closed-form evaluation built from numpy/scipy primitives.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, special, stats


def heat_density(s, r2, d):
    """Standard heat kernel ``phi_s`` at squared distance ``r2``."""
    return (2.0 * math.pi * s) ** (-0.5 * d) * np.exp(-r2 / (2.0 * s))


def green_closed_form(lam: float, r, d: int):
    """``int_0^inf e^{-lam s} phi_s(r) ds`` in closed form for d = 1, 2, 3."""
    r = np.asarray(r, dtype=float)
    k = math.sqrt(2.0 * lam)
    if d == 1:
        return np.exp(-k * r) / k
    if d == 2:
        return special.k0(k * r) / math.pi
    if d == 3:
        return np.exp(-k * r) / (2.0 * math.pi * r)
    raise ValueError(d)


def green_grad_radial_closed_form(lam: float, r, d: int):
    """``dQ/dr`` for d = 1, 3 (closed forms)."""
    r = np.asarray(r, dtype=float)
    k = math.sqrt(2.0 * lam)
    if d == 1:
        return -np.exp(-k * r)
    if d == 3:
        return -np.exp(-k * r) * (k * r + 1.0) / (2.0 * math.pi * r**2)
    raise ValueError(d)


def laplace_riemann(lam: float, r: float, d: int, extra_power: float = 0.0, n: int = 400_001) -> float:
    """Brute trapezoid in log time of ``int e^{-lam s} s^extra phi_s(r) ds``.

    The grid spans ``s`` from far below ``r^2`` to far above ``1/lam``.
    """
    lo = math.log(max(r * r, 1e-300)) - 12.0 * math.log(10.0)
    hi = math.log(80.0 / lam)
    tau = np.linspace(lo, hi, n)
    s = np.exp(tau)
    f = np.exp(-lam * s) * s**extra_power * heat_density(s, r * r, d) * s
    return float(np.trapezoid(f, tau))


def g_tilde_riemann(lam: float, r: float, d: int) -> float:
    """``G^lam(r) = int e^{-lam s} s^{-1/2} phi_s(r) ds`` by brute force."""
    return laplace_riemann(lam, r, d, -0.5)


def mixture_heat_pairing(weights, centers, bandwidths, f_center, f_bw, t):
    """``<P_t phi_{f_bw}(. - f_center), mu0>`` for a Gaussian-mixture ``mu0``."""
    total = 0.0
    for w, c, b in zip(weights, centers, bandwidths):
        c = np.atleast_1d(np.asarray(c, dtype=float))
        d = c.size
        cov = (b + f_bw + t) * np.eye(d)
        total += w * stats.multivariate_normal(mean=c, cov=cov).pdf(np.atleast_1d(f_center))
    return float(total)


def second_moment_one_jump_1d(w0: float, c0: float, b0: float, f_centers, f_bws, t: float, gs2: float) -> float:
    """``E <f1 (x) f2, mu_t^2>`` for the standard kernel in d = 1, by quadrature.

    ``mu0 = w0 phi_{b0}(. - c0)`` and ``f_k = phi_{s_k}(. - c_k)``.  With the
    dual started from two coordinates, either nothing happens (weight
    ``e^{gs2 t}`` on probability ``e^{-gs2 t}``) or the coordinates merge at
    ``tau`` (density ``gs2 e^{-gs2 tau}``, weight ``e^{gs2 tau}``), giving

        <P_t f1, mu0> <P_t f2, mu0> + gs2 int_0^t <P_{t-tau}(P_tau f1 P_tau f2), mu0> dtau.

    Every pairing is evaluated by direct numerical integration in space.
    """
    (c1, c2), (s1, s2) = f_centers, f_bws

    def norm(x, m, v):
        return np.exp(-((x - m) ** 2) / (2.0 * v)) / math.sqrt(2.0 * math.pi * v)

    def pairing(g, t_heat):
        # <P_{t_heat} g, mu0> = int g(y) w0 phi_{b0 + t_heat}(y - c0) dy
        val, _ = integrate.quad(lambda y: g(y) * w0 * norm(y, c0, b0 + t_heat), -np.inf, np.inf, epsabs=0, epsrel=1e-12, limit=200)
        return val

    no_jump = pairing(lambda y: norm(y, c1, s1), t) * pairing(lambda y: norm(y, c2, s2), t)

    def jump_integrand(tau):
        return pairing(lambda y: norm(y, c1, s1 + tau) * norm(y, c2, s2 + tau), t - tau)

    one_jump, _ = integrate.quad(jump_integrand, 0.0, t, epsabs=0, epsrel=1e-11)
    return no_jump + gs2 * one_jump


def gaussian_interaction_rho(points, bandwidth: float, amplitude):
    """Covariance per unit time of common increments for ``h_p = A_p phi_s``.

    Evaluates ``int h_p(y - x_i) h_q(y - x_j) dy`` by nested quadrature in
    d = 2 rather than the Gaussian-product identity.
    """
    pts = np.asarray(points, dtype=float)
    amp = np.asarray(amplitude, dtype=float)
    m, d = pts.shape
    assert d == 2
    out = np.zeros((m * d, m * d))
    for i in range(m):
        for j in range(m):
            def f(y2, y1, i=i, j=j):
                y = np.array([y1, y2])
                return heat_density(bandwidth, np.sum((y - pts[i]) ** 2), 2) * heat_density(bandwidth, np.sum((y - pts[j]) ** 2), 2)

            base, _ = integrate.dblquad(f, -12, 12, -12, 12, epsabs=1e-13, epsrel=1e-10)
            out[i * d : (i + 1) * d, j * d : (j + 1) * d] = base * np.outer(amp, amp)
    return out
