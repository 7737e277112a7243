"""Symbolic initial measures: pairings, samplers and hypothesis validators."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Any, Callable, Mapping

import numpy as np
from scipy import integrate, optimize, special, stats

from .cloud import ParticleCloud
from .errors import ConfigError, DomainError, QuadratureError
from .kernels import BoundCheck, gaussian_density, mollifier_Ia

# ---------------------------------------------------------------------------
# Extended reals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExtendedReal:
    """A finite real or ``+inf``, tagged so infinity never enters arithmetic."""

    value: float = 0.0
    infinite: bool = False

    @classmethod
    def finite(cls, value: float) -> ExtendedReal:
        value = float(value)
        if not math.isfinite(value):
            raise ValueError("finite ExtendedReal needs a finite value")
        return cls(value, False)

    @classmethod
    def infinity(cls) -> ExtendedReal:
        return cls(0.0, True)

    @property
    def is_finite(self) -> bool:
        return not self.infinite

    def __float__(self) -> float:
        if self.infinite:
            raise OverflowError("infinite ExtendedReal has no float value")
        return self.value

    def __le__(self, other) -> bool:
        if isinstance(other, ExtendedReal):
            if other.infinite:
                return True
            return not self.infinite and self.value <= other.value
        return not self.infinite and self.value <= other

    def __lt__(self, other) -> bool:
        if isinstance(other, ExtendedReal):
            if self.infinite:
                return False
            return other.infinite or self.value < other.value
        return not self.infinite and self.value < other

    def to_json(self) -> float | str:
        return "inf" if self.infinite else self.value

    def __str__(self) -> str:
        return "inf" if self.infinite else repr(self.value)


INF = ExtendedReal.infinity()

# ---------------------------------------------------------------------------
# Test fields with closed-form pairings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianField:
    """``f(x) = weight * phi_bandwidth(x - center)``."""

    center: Any
    bandwidth: float
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        if not self.bandwidth > 0:
            raise DomainError("bandwidth must be positive")

    @property
    def dimension(self) -> int:
        return self.center.shape[0]

    def __call__(self, x):
        return self.weight * np.asarray(gaussian_density(self.bandwidth, np.asarray(x, dtype=float) - self.center))


@dataclass(frozen=True)
class MollifierField:
    """``f(x) = I_a(x + shift)``."""

    a: float
    shift: Any

    def __post_init__(self):
        object.__setattr__(self, "shift", np.atleast_1d(np.asarray(self.shift, dtype=float)))
        if self.a < 0:
            raise DomainError("mollifier exponent must be nonnegative")

    @property
    def dimension(self) -> int:
        return self.shift.shape[0]

    def __call__(self, x):
        return np.asarray(mollifier_Ia(self.a, np.asarray(x, dtype=float) + self.shift))


def mollifier_mass(a: float, d: int) -> ExtendedReal:
    """Lebesgue integral of ``I_a`` over ``R^d``: ``pi^{d/2} Gamma((a-d)/2) / Gamma(a/2)``."""
    if a <= d:
        return INF
    log = 0.5 * d * math.log(math.pi) + special.gammaln(0.5 * (a - d)) - special.gammaln(0.5 * a)
    return ExtendedReal.finite(math.exp(log))


def gaussian_mollifier_expectation(a: float, c, s: float) -> float:
    """``E[I_a(c + sqrt(s) Z)]`` for standard normal ``Z`` in ``R^d``.

    ``|c + sqrt(s) Z|^2 / s`` is noncentral chi-square with ``d`` degrees of
    freedom, which reduces the expectation to a 1-D integral (taken in the
    variable ``u = sqrt(chi2)`` to tame the ``d = 1`` density at 0).
    """
    c = np.atleast_1d(np.asarray(c, dtype=float))
    d = c.shape[0]
    if s == 0:
        return float(mollifier_Ia(a, c))
    nc = float(c @ c) / s
    dist = stats.chi2(d) if nc == 0 else stats.ncx2(d, nc)

    def integrand(u):
        return (1.0 + s * u * u) ** (-0.5 * a) * dist.pdf(u * u) * 2.0 * u

    centre = math.sqrt(nc + d)
    upper = centre + 40.0
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", integrate.IntegrationWarning)
        val, err = integrate.quad(integrand, 0.0, upper, points=[centre], epsabs=1e-13, epsrel=1e-10, limit=200)
    if any(issubclass(w.category, integrate.IntegrationWarning) for w in caught):
        raise QuadratureError("noncentral chi-square quadrature did not converge", val, err)
    return float(val)


# ---------------------------------------------------------------------------
# Measures
# ---------------------------------------------------------------------------


class MeasureSpec:
    """Base class for the initial-measure variants."""

    dimension: int

    @property
    def total_mass(self) -> ExtendedReal:
        raise NotImplementedError

    @property
    def has_atoms(self) -> bool:
        return False

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class LebesgueWindow(MeasureSpec):
    """``scale`` times Lebesgue measure on a box.

    Bounds are either all finite (a window) or all infinite (the whole
    space); mixed slabs are not supported.
    """

    lower: Any
    upper: Any
    scale: float = 1.0

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ConfigError("window bounds must be equal-length vectors", "/initial_measure")
        fin = np.isfinite(lo) & np.isfinite(hi)
        if fin.any() and not fin.all():
            raise ConfigError("window bounds must be all finite or all infinite", "/initial_measure")
        if fin.all() and np.any(hi <= lo):
            raise ConfigError("window needs upper > lower", "/initial_measure")
        if not self.scale > 0:
            raise ConfigError("density scale must be positive", "/initial_measure/scale")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def full(cls, d: int, scale: float = 1.0) -> LebesgueWindow:
        return cls(np.full(d, -np.inf), np.full(d, np.inf), scale)

    @property
    def dimension(self) -> int:
        return self.lower.shape[0]

    @property
    def bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.lower)))

    @property
    def volume(self) -> ExtendedReal:
        return ExtendedReal.finite(float(np.prod(self.upper - self.lower))) if self.bounded else INF

    @property
    def total_mass(self) -> ExtendedReal:
        return ExtendedReal.finite(self.scale * self.volume.value) if self.bounded else INF

    def to_dict(self) -> dict:
        def enc(v):
            return [float(x) if math.isfinite(x) else ("inf" if x > 0 else "-inf") for x in v]

        return {"kind": "lebesgue_window", "lower": enc(self.lower), "upper": enc(self.upper), "scale": self.scale}


@dataclass(frozen=True)
class GaussianMixture(MeasureSpec):
    """``sum_k w_k phi_{b_k}(x - c_k) dx`` (finite measure of mass ``sum w_k``)."""

    weights: Any
    centers: Any
    bandwidths: Any

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        c = np.asarray(self.centers, dtype=float)
        if c.ndim == 1:
            c = c[None, :]
        b = np.broadcast_to(np.asarray(self.bandwidths, dtype=float), w.shape).copy()
        if c.shape[0] != w.shape[0] or w.ndim != 1:
            raise ConfigError("mixture weights and centers must have equal length", "/initial_measure")
        if np.any(w <= 0):
            raise ConfigError("mixture weights must be positive", "/initial_measure/weights")
        if np.any(b <= 0):
            raise ConfigError("mixture bandwidths must be positive", "/initial_measure/bandwidths")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "bandwidths", b)

    @classmethod
    def single(cls, d: int, weight: float = 1.0, bandwidth: float = 1.0, center=None) -> GaussianMixture:
        center = np.zeros(d) if center is None else center
        return cls([weight], [center], [bandwidth])

    @property
    def dimension(self) -> int:
        return self.centers.shape[1]

    @property
    def total_mass(self) -> ExtendedReal:
        return ExtendedReal.finite(float(self.weights.sum()))

    def to_dict(self) -> dict:
        return {
            "kind": "gaussian_mixture",
            "weights": self.weights.tolist(),
            "centers": self.centers.tolist(),
            "bandwidths": self.bandwidths.tolist(),
        }


@dataclass(frozen=True)
class Dirac(MeasureSpec):
    """Point mass ``mass * delta_point``."""

    point: Any
    mass: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "point", np.atleast_1d(np.asarray(self.point, dtype=float)))
        if not self.mass > 0:
            raise ConfigError("Dirac mass must be positive", "/initial_measure/mass")

    @property
    def dimension(self) -> int:
        return self.point.shape[0]

    @property
    def total_mass(self) -> ExtendedReal:
        return ExtendedReal.finite(self.mass)

    @property
    def has_atoms(self) -> bool:
        return True

    def to_dict(self) -> dict:
        return {"kind": "dirac", "point": self.point.tolist(), "mass": self.mass}


@dataclass(frozen=True)
class IaDensity(MeasureSpec):
    """``scale * I_a(x) dx``; finite iff ``a > d``, and in ``M_b`` for ``b > d - a``."""

    a: float
    dimension: int
    scale: float = 1.0

    def __post_init__(self):
        if self.a < 0:
            raise ConfigError("exponent a must be nonnegative", "/initial_measure/a")
        if not 1 <= self.dimension <= 3:
            raise ConfigError("dimension must be 1, 2 or 3", "/initial_measure/dimension")
        if not self.scale > 0:
            raise ConfigError("scale must be positive", "/initial_measure/scale")

    @property
    def total_mass(self) -> ExtendedReal:
        m = mollifier_mass(self.a, self.dimension)
        return ExtendedReal.finite(self.scale * m.value) if m.is_finite else INF

    def to_dict(self) -> dict:
        return {"kind": "ia_density", "a": self.a, "dimension": self.dimension, "scale": self.scale}


def measure_from_dict(doc: Mapping[str, Any]) -> MeasureSpec:
    """Build a measure from its JSON form (key ``kind`` selects the variant)."""

    def dec(v):
        return [float(x) for x in v]

    kind = doc.get("kind")
    try:
        if kind == "lebesgue_window":
            return LebesgueWindow(dec(doc["lower"]), dec(doc["upper"]), float(doc.get("scale", 1.0)))
        if kind == "gaussian_mixture":
            return GaussianMixture(doc["weights"], doc["centers"], doc["bandwidths"])
        if kind == "dirac":
            return Dirac(doc["point"], float(doc.get("mass", 1.0)))
        if kind == "ia_density":
            return IaDensity(float(doc["a"]), int(doc["dimension"]), float(doc.get("scale", 1.0)))
    except KeyError as exc:
        raise ConfigError("missing key", f"/initial_measure/{exc.args[0]}") from None
    raise ConfigError(f"unknown measure kind {kind!r}", "/initial_measure/kind")


# ---------------------------------------------------------------------------
# Pairing
# ---------------------------------------------------------------------------

_HERMITE_ORDER = {1: 80, 2: 48, 3: 28}


def _hermite_rule(d: int):
    """Tensor Gauss-Hermite nodes/weights for ``E[g(Z)]``, ``Z ~ N(0, I_d)``."""
    x, w = special.roots_hermitenorm(_HERMITE_ORDER[d])
    w = w / w.sum()
    grids = np.meshgrid(*([x] * d), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    weights = np.ones(nodes.shape[0])
    for k, g in enumerate(np.meshgrid(*([w] * d), indexing="ij")):
        weights = weights * g.ravel()
    return nodes, weights


def _integrate_box(f: Callable, lower, upper, epsabs=1e-12, epsrel=1e-10) -> float:
    d = len(lower)

    def integrand(*u):
        return float(np.asarray(f(np.asarray(u)[None, :])).reshape(-1)[0])

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", integrate.IntegrationWarning)
        val, err = integrate.nquad(integrand, list(zip(lower, upper)), opts={"epsabs": epsabs, "epsrel": epsrel, "limit": 200})
    if any(issubclass(w.category, integrate.IntegrationWarning) for w in caught):
        raise QuadratureError(f"{d}-D quadrature did not converge", val, err)
    return float(val)


def _integrate_rd(f: Callable, d: int) -> ExtendedReal:
    """Integral of ``f`` over ``R^d`` with a growing-box divergence test."""
    values = []
    for radius in (8.0, 32.0, 128.0):
        values.append(_integrate_box(f, [-radius] * d, [radius] * d))
    last, prev = values[-1], values[-2]
    if abs(last - prev) <= max(1e-6 * abs(last), 1e-10):
        return ExtendedReal.finite(last)
    growth = abs(last - prev) / max(abs(prev - values[0]), 1e-300)
    if growth < 0.5:
        # Tail shrinking geometrically: accept the extrapolated value.
        return ExtendedReal.finite(last + (last - prev) * growth / (1 - growth))
    return INF


def _check_dim(mu: MeasureSpec, f) -> None:
    fd = getattr(f, "dimension", None)
    if fd is not None and fd != mu.dimension:
        raise DomainError(f"field dimension {fd} does not match measure dimension {mu.dimension}")


def pair(mu: MeasureSpec, f) -> ExtendedReal:
    """``<f, mu>``: closed forms where available, quadrature otherwise.

    ``f`` is a :class:`GaussianField`, a :class:`MollifierField` or any
    callable mapping ``(n, d)`` points to ``(n,)`` values.  Gaussian
    mixtures against generic callables use a tensor Gauss-Hermite rule; Dirac
    masses evaluate directly; Lebesgue windows and ``I_a`` densities use
    adaptive quadrature.  A divergent pairing returns the infinity flag.
    """
    _check_dim(mu, f)
    d = mu.dimension
    if isinstance(mu, Dirac):
        return ExtendedReal.finite(mu.mass * float(np.asarray(f(mu.point[None, :])).reshape(-1)[0]))

    if isinstance(mu, GaussianMixture):
        if isinstance(f, GaussianField):
            vals = gaussian_density(mu.bandwidths + f.bandwidth, mu.centers - f.center)
            return ExtendedReal.finite(f.weight * float(np.dot(mu.weights, np.atleast_1d(vals))))
        if isinstance(f, MollifierField):
            total = sum(
                w * gaussian_mollifier_expectation(f.a, c + f.shift, b)
                for w, c, b in zip(mu.weights, mu.centers, mu.bandwidths)
            )
            return ExtendedReal.finite(total)
        nodes, weights = _hermite_rule(d)
        total = 0.0
        for w, c, b in zip(mu.weights, mu.centers, mu.bandwidths):
            total += w * float(np.dot(weights, np.asarray(f(c + math.sqrt(b) * nodes), dtype=float)))
        return ExtendedReal.finite(total)

    if isinstance(mu, LebesgueWindow):
        if isinstance(f, GaussianField):
            if not mu.bounded:
                return ExtendedReal.finite(mu.scale * f.weight)
            sd = math.sqrt(f.bandwidth)
            probs = special.ndtr((mu.upper - f.center) / sd) - special.ndtr((mu.lower - f.center) / sd)
            return ExtendedReal.finite(mu.scale * f.weight * float(np.prod(probs)))
        if isinstance(f, MollifierField) and not mu.bounded:
            m = mollifier_mass(f.a, d)
            return ExtendedReal.finite(mu.scale * m.value) if m.is_finite else INF
        if mu.bounded:
            return ExtendedReal.finite(mu.scale * _integrate_box(f, mu.lower, mu.upper))
        val = _integrate_rd(f, d)
        return ExtendedReal.finite(mu.scale * val.value) if val.is_finite else INF

    if isinstance(mu, IaDensity):
        if isinstance(f, GaussianField):
            return ExtendedReal.finite(mu.scale * f.weight * gaussian_mollifier_expectation(mu.a, f.center, f.bandwidth))
        if isinstance(f, MollifierField):
            if mu.a + f.a <= d:
                return INF
            if not np.any(f.shift):
                return ExtendedReal.finite(mu.scale * mollifier_mass(mu.a + f.a, d).value)

        def g(x):
            return np.asarray(f(x)) * np.asarray(mollifier_Ia(mu.a, x))

        val = _integrate_rd(g, d)
        return ExtendedReal.finite(mu.scale * val.value) if val.is_finite else INF

    raise TypeError(f"unsupported measure {type(mu).__name__}")


# ---------------------------------------------------------------------------
# Hypothesis validators
# ---------------------------------------------------------------------------


def _mixture_heat(mu: GaussianMixture, s: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``<phi_s(y - .), mu>`` for arrays ``s`` (S,) and ``y`` (Y, d); shape (S, Y)."""
    total = np.zeros((s.shape[0], y.shape[0]))
    for w, c, b in zip(mu.weights, mu.centers, mu.bandwidths):
        total += w * np.asarray(gaussian_density((s + b)[:, None], (y - c)[None, :, :]))
    return total


def upsilon(mu: MeasureSpec, t: float, s_min: float = 1e-6, n_s: int = 64, n_y: int | None = None) -> ExtendedReal:
    """``sup_y sup_{0 < s <= t} <phi_s(y - .), mu>``.

    * Dirac (any atom): infinite.
    * Lebesgue window or whole space: ``scale`` (approached as ``s -> 0`` at
      interior points, and never exceeded since ``phi_s`` has unit mass).
    * ``I_a`` density: ``scale`` for the same reason, as ``I_a <= 1 = I_a(0)``.
    * Gaussian mixture: numerical search.  Every stationary point in ``y`` is a
      convex combination of the centers, so ``y`` ranges over their bounding
      box (plus the centers themselves); ``s`` runs over a log grid from
      ``s_min`` to ``t`` together with the limit ``s -> 0``, which is admissible
      because the component bandwidths are positive.  The best grid point is
      then polished with Nelder-Mead.
    """
    if not t > 0:
        raise DomainError("t must be positive")
    if mu.has_atoms:
        return INF
    if isinstance(mu, (LebesgueWindow, IaDensity)):
        return ExtendedReal.finite(mu.scale)
    if not isinstance(mu, GaussianMixture):
        raise TypeError(f"unsupported measure {type(mu).__name__}")
    d = mu.dimension
    s_grid = np.concatenate([[0.0], np.geomspace(min(s_min, t), t, n_s)])
    lo, hi = mu.centers.min(axis=0), mu.centers.max(axis=0)
    if n_y is None:
        n_y = {1: 201, 2: 41, 3: 15}[d]
    axes = [np.linspace(lo[k], hi[k], n_y if hi[k] > lo[k] else 1) for k in range(d)]
    ys = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    ys = np.concatenate([ys, mu.centers])
    vals = _mixture_heat(mu, s_grid, ys)
    i, j = np.unravel_index(int(np.argmax(vals)), vals.shape)
    best = float(vals[i, j])
    if mu.weights.shape[0] > 1:

        def neg(theta):
            s = float(np.clip(theta[-1], 0.0, t))
            return -float(_mixture_heat(mu, np.array([s]), theta[None, :d])[0, 0])

        res = optimize.minimize(neg, np.concatenate([ys[j], [s_grid[i]]]), method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14})
        best = max(best, -float(res.fun))
    return ExtendedReal.finite(best)


def check_uniform_integ(mu: MeasureSpec, a: float) -> ExtendedReal:
    """``sup_w <I_a(. + w), mu>``.

    Finite measures are bounded by their mass; the supremum is attained at
    ``w = -x0`` for a Dirac, at ``w = 0`` for ``I_a`` densities and at the
    window center for windows.  Gaussian mixtures use a local search started
    from every ``-center``.
    """
    if a < 0:
        raise DomainError("a must be nonnegative")
    d = mu.dimension
    if isinstance(mu, Dirac):
        return ExtendedReal.finite(mu.mass)
    if isinstance(mu, IaDensity):
        m = mollifier_mass(a + mu.a, d)
        return ExtendedReal.finite(mu.scale * m.value) if m.is_finite else INF
    if isinstance(mu, LebesgueWindow):
        if not mu.bounded:
            m = mollifier_mass(a, d)
            return ExtendedReal.finite(mu.scale * m.value) if m.is_finite else INF
        mid = 0.5 * (mu.lower + mu.upper)
        return pair(mu, MollifierField(a, -mid))
    if isinstance(mu, GaussianMixture):

        def value(w):
            return pair(mu, MollifierField(a, w)).value

        best = max(value(-c) for c in mu.centers)
        if mu.weights.shape[0] > 1:
            starts = [-c for c in mu.centers]
            for w0 in starts:
                res = optimize.minimize(lambda w: -value(w), w0, method="Nelder-Mead", options={"xatol": 1e-6, "fatol": 1e-10, "maxiter": 400})
                best = max(best, -float(res.fun))
        return ExtendedReal.finite(min(best, mu.total_mass.value))
    raise TypeError(f"unsupported measure {type(mu).__name__}")


def kernel_growth(y, eps, t) -> BoundCheck:
    """``sup_{eps <= s <= t} phi_s(y) <= (t/eps)^{d/2} phi_t(y)``.

    The supremum is explicit: ``s -> phi_s(y)`` peaks at ``s = |y|^2 / d``.
    """
    y = np.asarray(y, dtype=float)
    eps = np.asarray(eps, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(eps <= 0) or np.any(t < eps):
        raise DomainError("need 0 < eps <= t")
    d = y.shape[-1]
    r2 = np.einsum("...i,...i->...", y, y)
    s_star = np.clip(r2 / d, eps, t)

    def log_phi(s):
        return -0.5 * d * np.log(2 * math.pi * s) - r2 / (2 * s)

    return BoundCheck(*np.broadcast_arrays(log_phi(s_star), 0.5 * d * np.log(t / eps) + log_phi(t)))


def main_constant(a: float, d: int, T: float, radii=None, n_s: int = 24) -> float:
    """Grid supremum of ``I_a(x)^{-1} <I_a, phi_s(. - x)>`` over ``|x|`` and ``s <= T``.

    The quantity is radial in ``x``; a finite value that stabilizes as the
    radial grid is extended indicates the constant exists.
    """
    if radii is None:
        radii = np.concatenate([[0.0], np.geomspace(1e-2, 1e3, 30)])
    best = 0.0
    for r in radii:
        x = np.zeros(d)
        x[0] = r
        inv = (1.0 + r * r) ** (0.5 * a)
        for s in np.geomspace(1e-6, T, n_s):
            best = max(best, inv * gaussian_mollifier_expectation(a, x, float(s)))
    return best


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def sample(mu: MeasureSpec, n: int, rng: np.random.Generator) -> ParticleCloud:
    """``n`` i.i.d. particles from the normalized measure, each of mass ``total/n``."""
    if n < 1:
        raise ConfigError("particle count must be at least 1", "/particles")
    d = mu.dimension
    mass = mu.total_mass
    if not mass.is_finite:
        raise ConfigError("cannot sample an infinite measure; use a bounded window", "/initial_measure")
    masses = np.full(n, mass.value / n)
    if isinstance(mu, Dirac):
        pos = np.repeat(mu.point[None, :], n, axis=0)
    elif isinstance(mu, GaussianMixture):
        comp = rng.choice(mu.weights.shape[0], size=n, p=mu.weights / mu.weights.sum())
        pos = mu.centers[comp] + np.sqrt(mu.bandwidths[comp])[:, None] * rng.standard_normal((n, d))
    elif isinstance(mu, LebesgueWindow):
        pos = mu.lower + (mu.upper - mu.lower) * rng.random((n, d))
    elif isinstance(mu, IaDensity):
        # |X|^2 / (1 + |X|^2) ~ Beta(d/2, (a - d)/2) with uniform direction.
        beta = rng.beta(0.5 * d, 0.5 * (mu.a - d), size=n)
        radius = np.sqrt(beta / (1.0 - beta))
        direction = rng.standard_normal((n, d))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        pos = radius[:, None] * direction
    else:
        raise TypeError(f"unsupported measure {type(mu).__name__}")
    return ParticleCloud(pos, masses, 0.0)
