"""Analytic and numerical kernel layer.

Gaussian densities, the interaction coefficients built from a kernel model
``(h, c)``, Green functions with their Laplace-time quadratures, the
polynomial mollifier and the inequalities used in the regularity estimates.

Points are arrays whose *last* axis holds the ``d`` coordinates.  A single
point in one dimension is therefore ``[x]`` and ``n`` points are ``(n, 1)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np
from scipy import integrate, optimize, signal, special
from scipy.interpolate import RegularGridInterpolator

from .errors import ConfigError, DomainError, ModelRejected, QuadratureError, SingularityError

TWO_PI = 2.0 * math.pi

#: Default adaptive-quadrature tolerances.  Green functions range over many
#: orders of magnitude, so the Laplace-time integrals are controlled purely
#: in relative terms (see ``_laplace_quad``).
QUAD_EPSABS = 1e-10
QUAD_EPSREL = 1e-8
LAPLACE_EPSREL = 1e-11

#: Support threshold for numerical integration of ``h``.
H_SUPPORT_CUTOFF = 1e-12


def _as_points(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim == 0:
        raise DomainError("points need a trailing coordinate axis, e.g. [x] in d=1")
    return y


def _sqnorm(y: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...i->...", y, y)


def _scalar_or_array(v):
    v = np.asarray(v)
    return float(v) if v.ndim == 0 else v


# ---------------------------------------------------------------------------
# Gaussian densities
# ---------------------------------------------------------------------------


def gaussian_density(s, y):
    """Heat kernel ``phi_s(y) = (2 pi s)^{-d/2} exp(-|y|^2 / 2s)``.

    ``s`` broadcasts against the leading axes of ``y``.
    """
    y = _as_points(y)
    s = np.asarray(s, dtype=float)
    if np.any(~np.isfinite(s)) or np.any(s <= 0):
        raise DomainError("gaussian_density needs s > 0")
    d = y.shape[-1]
    out = (TWO_PI * s) ** (-0.5 * d) * np.exp(-_sqnorm(y) / (2.0 * s))
    return _scalar_or_array(out)


def gaussian_density_grad(s, y) -> np.ndarray:
    """Spatial gradient of :func:`gaussian_density`, shape ``y.shape``."""
    y = _as_points(y)
    s = np.asarray(s, dtype=float)
    dens = np.asarray(gaussian_density(s, y))
    return -y / s[..., None] * dens[..., None]


def gaussian_product(u: float, v: float, d: int = 1) -> tuple[float, float, float]:
    """Parameters of ``phi_u(x) phi_v(x) = scale * phi_z(x)``.

    Returns ``(w, z, scale)`` with ``w = u + v``, ``z = uv/w`` and
    ``scale = (2 pi w)^{-d/2}``.
    """
    if not (u > 0 and v > 0) or not (math.isfinite(u) and math.isfinite(v)):
        raise DomainError("gaussian_product needs u > 0 and v > 0")
    if d < 1:
        raise DomainError("dimension must be positive")
    w = u + v
    z = u * v / w
    return w, z, (TWO_PI * w) ** (-0.5 * d)


def merge_gaussians(u: float, a, v: float, b) -> tuple[float, np.ndarray, float]:
    """Product of two Gaussians with different centers.

    ``phi_u(y - a) phi_v(y - b) = exp(log_scale) * phi_z(y - center)``; returns
    ``(z, center, log_scale)`` where ``log_scale = log phi_{u+v}(a - b)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    w, z, _ = gaussian_product(u, v, a.shape[-1])
    center = (v * a + u * b) / w
    diff = a - b
    log_scale = -0.5 * a.shape[-1] * math.log(TWO_PI * w) - float(diff @ diff) / (2.0 * w)
    return z, center, log_scale


def gaussian_product_trials(n: int, rng: np.random.Generator) -> float:
    """Largest relative error of ``phi_u phi_v = scale * phi_z`` over ``n`` random draws.

    Draws ``u, v`` log-uniformly over four decades, ``d`` in ``{1, 2, 3}`` and
    ``x`` at the scale of the product Gaussian (where the product is not
    negligible; far out in the tails the exponents are so large that
    double rounding alone exceeds 1e-12).  Errors are measured on
    logarithms, which equals relative error to first order and stays
    meaningful when the densities underflow.
    """
    u = np.exp(rng.uniform(-4.6, 4.6, n))
    v = np.exp(rng.uniform(-4.6, 4.6, n))
    worst = 0.0
    for d in (1, 2, 3):
        idx = np.arange(d - 1, n, 3)
        if idx.size == 0:
            continue
        uu, vv = u[idx], v[idx]
        w = uu + vv
        z = uu * vv / w
        x = 2.0 * rng.standard_normal((idx.size, d)) * np.sqrt(z)[:, None]
        r2 = np.sum(x * x, axis=1)

        def log_phi(s):
            return -0.5 * d * np.log(TWO_PI * s) - r2 / (2.0 * s)

        lhs = log_phi(uu) + log_phi(vv)
        rhs = -0.5 * d * np.log(TWO_PI * w) + log_phi(z)
        worst = max(worst, float(np.max(np.abs(np.expm1(lhs - rhs)))))
    return worst


# ---------------------------------------------------------------------------
# Kernel model
# ---------------------------------------------------------------------------

H_KINDS = ("zero", "gaussian", "table")
C_KINDS = ("identity", "constant")


@dataclass(frozen=True, eq=False)
class KernelModel:
    """The pair ``(h, c)`` defining individual and common diffusion.

    ``h`` is a vector of ``d`` scalar fields and ``c`` a ``d x d`` matrix
    field.  Supported ``h`` kinds:

    * ``zero``: no interaction.
    * ``gaussian``: ``h_p = A_p phi_s`` with params ``bandwidth`` (``s``,
      default 1) and ``amplitude`` (scalar or length-``d`` list, default 1).
    * ``table``: uniform grid samples with multilinear interpolation and
      zero extension; params ``lower``, ``upper`` (length ``d``) and
      ``values`` of shape ``(d, n_1, ..., n_d)``.

    ``c`` is either the identity or a constant matrix.  A spatially varying
    ``c`` can be supplied programmatically through ``c_field`` (a callable
    mapping ``(..., d)`` points to ``(..., d, d)`` matrices); such models are
    not serializable and have no Green function.
    """

    dimension: int
    h_kind: str = "zero"
    h_params: Mapping[str, Any] = field(default_factory=dict)
    c_kind: str = "identity"
    c_matrix: Any = None
    c_field: Callable[[np.ndarray], np.ndarray] | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        d = self.dimension
        if not isinstance(d, (int, np.integer)) or not 1 <= d <= 3:
            raise ConfigError("dimension must be an integer in {1, 2, 3}", "/dimension")
        if self.h_kind not in H_KINDS:
            raise ConfigError(f"unknown h kind {self.h_kind!r}", "/h/kind")
        if self.c_kind not in C_KINDS:
            raise ConfigError(f"unknown c kind {self.c_kind!r}", "/c/kind")
        if self.c_kind == "constant":
            mat = np.asarray(self.c_matrix, dtype=float)
            if mat.shape != (d, d) or not np.all(np.isfinite(mat)):
                raise ConfigError(f"c matrix must be a finite {d}x{d} array", "/c/matrix")
            object.__setattr__(self, "c_matrix", mat)
        elif self.c_matrix is not None:
            raise ConfigError("identity c takes no matrix", "/c/matrix")
        if self.h_kind == "gaussian":
            s = float(self.h_params.get("bandwidth", 1.0))
            amp = np.broadcast_to(np.asarray(self.h_params.get("amplitude", 1.0), dtype=float), (d,)).copy()
            if not s > 0:
                raise ConfigError("gaussian h bandwidth must be positive", "/h/params/bandwidth")
            self._cache["gauss"] = (s, amp)
        elif self.h_kind == "table":
            self._cache["table"] = self._build_table()

    # -- construction helpers ------------------------------------------------

    @classmethod
    def standard(cls, d: int) -> KernelModel:
        """Super-Brownian kernel: ``h = 0``, ``c = I``."""
        return cls(d)

    @classmethod
    def gaussian_interaction(cls, d: int, bandwidth: float = 1.0, amplitude=1.0, c=None) -> KernelModel:
        """``h_p = amplitude_p * phi_bandwidth`` with identity (or given constant) ``c``."""
        params = {"bandwidth": bandwidth, "amplitude": amplitude}
        if c is None:
            return cls(d, "gaussian", params)
        return cls(d, "gaussian", params, "constant", c)

    def _build_table(self):
        d = self.dimension
        try:
            lower = np.asarray(self.h_params["lower"], dtype=float)
            upper = np.asarray(self.h_params["upper"], dtype=float)
            values = np.asarray(self.h_params["values"], dtype=float)
        except KeyError as exc:
            raise ConfigError(f"table h needs {exc.args[0]!r}", f"/h/params/{exc.args[0]}") from None
        if lower.shape != (d,) or upper.shape != (d,) or np.any(upper <= lower):
            raise ConfigError("table bounds must be length-d with upper > lower", "/h/params")
        if values.ndim != d + 1 or values.shape[0] != d or min(values.shape[1:]) < 2:
            raise ConfigError(f"table values must have shape (d, n_1..n_d), got {values.shape}", "/h/params/values")
        if len(set(values.shape[1:])) != 1:
            raise ConfigError("table grids must have the same node count on every axis", "/h/params/values")
        n = values.shape[1]
        spacing = (upper - lower) / (n - 1)
        if not np.allclose(spacing, spacing[0], rtol=1e-12):
            raise ConfigError("table grid spacing must be equal on every axis", "/h/params")
        axes = tuple(np.linspace(lower[k], upper[k], n) for k in range(d))
        interps = [RegularGridInterpolator(axes, values[p], bounds_error=False, fill_value=0.0) for p in range(d)]
        return {"lower": lower, "upper": upper, "values": values, "axes": axes, "spacing": float(spacing[0]), "interp": interps}

    # -- coefficient fields ----------------------------------------------------

    @property
    def constant_coefficients(self) -> bool:
        return self.c_field is None

    @property
    def is_standard(self) -> bool:
        return self.h_kind == "zero" and self.c_kind == "identity" and self.c_field is None

    @property
    def gaussian_h(self) -> tuple[float, np.ndarray] | None:
        """``(bandwidth, amplitudes)`` when ``h`` is Gaussian, else ``None``."""
        return self._cache.get("gauss")

    def h(self, x) -> np.ndarray:
        """Evaluate ``h`` at points ``x``; result has shape ``x.shape``."""
        x = _as_points(x)
        d = self.dimension
        if x.shape[-1] != d:
            raise DomainError(f"expected points of dimension {d}")
        if self.h_kind == "zero":
            return np.zeros_like(x)
        if self.h_kind == "gaussian":
            s, amp = self._cache["gauss"]
            return np.asarray(gaussian_density(s, x))[..., None] * amp
        tab = self._cache["table"]
        flat = x.reshape(-1, d)
        out = np.stack([f(flat) for f in tab["interp"]], axis=-1)
        return out.reshape(x.shape)

    def c(self, x) -> np.ndarray:
        """Matrix field ``c`` at points ``x``; shape ``x.shape + (d,)``."""
        x = _as_points(x)
        d = self.dimension
        if self.c_field is not None:
            return np.asarray(self.c_field(x), dtype=float)
        base = np.eye(d) if self.c_kind == "identity" else self.c_matrix
        return np.broadcast_to(base, x.shape[:-1] + (d, d))

    def a(self, x) -> np.ndarray:
        """Individual diffusion coefficient ``a = c c^T`` at points ``x``."""
        cx = self.c(x)
        return np.einsum("...ik,...jk->...ij", cx, cx)

    @property
    def c_constant(self) -> np.ndarray:
        if self.c_field is not None:
            raise DomainError("model has spatially varying c")
        return np.eye(self.dimension) if self.c_kind == "identity" else self.c_matrix

    @property
    def sigma(self) -> np.ndarray:
        """One-particle diffusion matrix ``a + rho(0)`` (constant coefficients only)."""
        if "sigma" not in self._cache:
            c = self.c_constant
            self._cache["sigma"] = c @ c.T + rho(self, np.zeros(self.dimension))
        return self._cache["sigma"]

    def h_support_box(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Box outside of which ``|h| <= 1e-12 max|h|``; ``None`` for ``h = 0``."""
        d = self.dimension
        if self.h_kind == "zero":
            return None
        if self.h_kind == "gaussian":
            s, _ = self._cache["gauss"]
            radius = math.sqrt(2.0 * s * math.log(1.0 / H_SUPPORT_CUTOFF))
            return np.full(d, -radius), np.full(d, radius)
        tab = self._cache["table"]
        return tab["lower"].copy(), tab["upper"].copy()

    # -- serialization -----------------------------------------------------------

    def to_dict(self) -> dict:
        if self.c_field is not None:
            raise ConfigError("models with a programmatic c field cannot be serialized")
        h: dict[str, Any] = {"kind": self.h_kind}
        if self.h_kind == "gaussian":
            s, amp = self._cache["gauss"]
            h["params"] = {"bandwidth": s, "amplitude": amp.tolist()}
        elif self.h_kind == "table":
            tab = self._cache["table"]
            h["params"] = {"lower": tab["lower"].tolist(), "upper": tab["upper"].tolist(), "values": tab["values"].tolist()}
        c: dict[str, Any] = {"kind": self.c_kind}
        if self.c_kind == "constant":
            c["matrix"] = self.c_matrix.tolist()
        return {"dimension": int(self.dimension), "h": h, "c": c}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> KernelModel:
        try:
            d = int(doc["dimension"])
        except KeyError:
            raise ConfigError("missing key", "/dimension") from None
        h = doc.get("h", {"kind": "zero"})
        c = doc.get("c", {"kind": "identity"})
        return cls(d, h.get("kind", "zero"), dict(h.get("params", {})), c.get("kind", "identity"), c.get("matrix"))


# ---------------------------------------------------------------------------
# Interaction coefficients
# ---------------------------------------------------------------------------


def _quad_nd(func, lower, upper, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, points=None) -> float:
    """Adaptive Gauss-Kronrod over a box, raising on non-convergence."""
    ranges = list(zip(lower, upper))
    opts = {"epsabs": epsabs, "epsrel": epsrel, "limit": 200}
    if points is not None:
        opts = [dict(opts, points=pts) for pts in points]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", integrate.IntegrationWarning)
        val, err = integrate.nquad(func, ranges, opts=opts)
    if any(issubclass(w.category, integrate.IntegrationWarning) for w in caught):
        raise QuadratureError("adaptive quadrature did not converge", val, err)
    return float(val)


def _rho_quad(model: KernelModel, x: np.ndarray) -> np.ndarray:
    d = model.dimension
    box = model.h_support_box()
    out = np.zeros((d, d))
    if box is None:
        return out
    lo, hi = box
    # h_p(u - x) lives on [lo + x, hi + x]; h_q(u) on [lo, hi].
    a = np.maximum(lo + x, lo)
    b = np.minimum(hi + x, hi)
    if np.any(b <= a):
        return out
    breaks = None
    if model.h_kind == "table":
        axes = model._cache["table"]["axes"]
        breaks = []
        for k in range(d):
            nodes = np.concatenate([axes[k], axes[k] + x[k]])
            inside = nodes[(nodes > a[k]) & (nodes < b[k])]
            breaks.append(np.unique(inside)[:150])
    for p in range(d):
        for q in range(d):

            def integrand(*u, p=p, q=q):
                u = np.asarray(u)
                return model.h(u - x)[p] * model.h(u)[q]

            out[p, q] = _quad_nd(integrand, a, b, points=breaks)
    return out


def rho(model: KernelModel, x, method: str = "auto") -> np.ndarray:
    """Common-noise covariance density ``rho_pq(x) = int h_p(u - x) h_q(u) du``.

    ``method="auto"`` uses the closed form ``A_p A_q phi_{2s}(x)`` for Gaussian
    ``h`` and adaptive quadrature otherwise; ``method="quad"`` always
    integrates numerically over the box where ``|h| > 1e-12 max|h|``.
    """
    x = _as_points(x)
    d = model.dimension
    if x.shape != (d,):
        raise DomainError(f"rho takes a single point of dimension {d}")
    if method not in ("auto", "quad"):
        raise ValueError(f"unknown method {method!r}")
    if model.h_kind == "zero":
        return np.zeros((d, d))
    if method == "auto" and model.h_kind == "gaussian":
        s, amp = model.gaussian_h
        return np.outer(amp, amp) * gaussian_density(2.0 * s, x)
    return _rho_quad(model, x)


def _table_lag_interpolators(model: KernelModel):
    """Exact ``rho`` of the piecewise-multilinear table on the lag lattice.

    For two multilinear functions on the same mesh the integral of their
    product reduces to a discrete correlation smoothed by the stencil
    ``[1, 4, 1] / 6`` along each axis.  Between lattice lags we interpolate
    linearly.
    """
    if "lag" in model._cache:
        return model._cache["lag"]
    tab = model._cache["table"]
    d = model.dimension
    vals, delta = tab["values"], tab["spacing"]
    n = vals.shape[1]
    lags = tuple(np.arange(-(n - 1), n) * delta for _ in range(d))
    stencil = np.array([1.0, 4.0, 1.0]) / 6.0
    interps = {}
    for p in range(d):
        for q in range(d):
            corr = signal.correlate(vals[q], vals[p], mode="full", method="direct")
            for axis in range(d):
                shape = [1] * d
                shape[axis] = 3
                corr = signal.convolve(corr, stencil.reshape(shape), mode="same")
            interps[p, q] = RegularGridInterpolator(lags, corr * delta**d, bounds_error=False, fill_value=0.0)
    model._cache["lag"] = interps
    return interps


def rho_pairwise(model: KernelModel, points) -> np.ndarray:
    """``rho(x_i - x_j)`` for all pairs; shape ``(m, m, d, d)``."""
    pts = _as_points(points)
    m, d = pts.shape
    diff = pts[:, None, :] - pts[None, :, :]
    if model.h_kind == "zero":
        return np.zeros((m, m, d, d))
    if model.h_kind == "gaussian":
        s, amp = model.gaussian_h
        k = np.asarray(gaussian_density(2.0 * s, diff))
        return k[:, :, None, None] * np.outer(amp, amp)
    interps = _table_lag_interpolators(model)
    flat = diff.reshape(-1, d)
    out = np.empty((m * m, d, d))
    for (p, q), f in interps.items():
        out[:, p, q] = f(flat)
    return out.reshape(m, m, d, d)


def _blocks_to_matrix(blocks: np.ndarray) -> np.ndarray:
    m, _, d, _ = blocks.shape
    return blocks.transpose(0, 2, 1, 3).reshape(m * d, m * d)


def gamma_matrix(model: KernelModel, points) -> np.ndarray:
    """Joint diffusion matrix of ``m`` particles, shape ``(m d, m d)``.

    Block ``(i, j)`` is ``a(x_i) + rho(0)`` on the diagonal and
    ``rho(x_i - x_j)`` off it.
    """
    pts = _as_points(points)
    if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] != model.dimension:
        raise DomainError("gamma_matrix needs an (m, d) configuration with m >= 1")
    blocks = rho_pairwise(model, pts).copy()
    idx = np.arange(pts.shape[0])
    # the diagonal blocks of rho_pairwise already hold rho(0)
    blocks[idx, idx] = model.a(pts) + blocks[idx, idx]
    mat = _blocks_to_matrix(blocks)
    return 0.5 * (mat + mat.T)


def common_covariance(model: KernelModel, points) -> np.ndarray:
    """Covariance per unit time of the common-noise increments, ``(m d, m d)``.

    Block ``(i, j)`` is ``rho(x_i - x_j)``, including ``rho(0)`` on the
    diagonal.
    """
    mat = _blocks_to_matrix(rho_pairwise(model, points))
    return 0.5 * (mat + mat.T)


def random_configurations(d: int, m_max: int, count: int, rng: np.random.Generator, box: float = 3.0) -> list[np.ndarray]:
    """Sample configurations for ellipticity checks.

    Sizes cycle through ``1..m_max``; every third configuration places two
    particles within ``1e-3`` of each other to probe near-coincidence.
    """
    configs = []
    for k in range(count):
        m = 1 + k % m_max
        pts = rng.uniform(-box, box, size=(m, d))
        if m >= 2 and k % 3 == 0:
            pts[1] = pts[0] + rng.uniform(-1e-3, 1e-3, size=d)
        configs.append(pts)
    return configs


def check_ellipticity(model: KernelModel, configurations, rel_tol: float = 1e-12) -> tuple[float, float]:
    """Smallest and largest eigenvalue of ``Gamma`` over the configurations.

    Raises :class:`ModelRejected` when some ``Gamma`` is not strictly
    positive definite (smallest eigenvalue below ``rel_tol`` times the
    largest, or below ``rel_tol`` in absolute terms).
    """
    configurations = list(configurations)
    if not configurations:
        raise DomainError("need at least one configuration")
    lo, hi = math.inf, -math.inf
    for pts in configurations:
        eig = np.linalg.eigvalsh(gamma_matrix(model, pts))
        if eig[0] <= rel_tol * max(1.0, eig[-1]):
            raise ModelRejected(f"Gamma not positive definite at m={len(pts)} (min eigenvalue {eig[0]:.3g})")
        lo, hi = min(lo, float(eig[0])), max(hi, float(eig[-1]))
    return lo, hi


# ---------------------------------------------------------------------------
# Green functions
# ---------------------------------------------------------------------------


def _laplace_bessel(lam: float, r2: np.ndarray, nu: float) -> np.ndarray:
    """``int_0^inf e^{-lam t} t^{nu-1} e^{-r2/2t} dt`` via ``K_nu`` (``r2 > 0``)."""
    r = np.sqrt(r2)
    z = r * math.sqrt(2.0 * lam)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 2.0 * (r2 / (2.0 * lam)) ** (0.5 * nu) * special.kve(nu, z) * np.exp(-z)
    return out


def _laplace_quad(lam: float, r2: float, power: float, epsrel: float = LAPLACE_EPSREL) -> float:
    """``int_0^inf e^{-lam t} t^power e^{-r2/2t} dt`` by quadrature in log time.

    With ``t = e^tau`` the log-integrand ``g`` is concave, so we locate its
    peak, integrate ``exp(g - g_peak)`` on either side out to where it has
    dropped by ``e^{-60}``, and rescale.
    """
    nu = power + 1.0
    if r2 == 0.0:
        if nu <= 0:
            return math.inf
        return math.gamma(nu) * lam ** (-nu)
    u_star = (nu + math.sqrt(nu * nu + 2.0 * lam * r2)) / (2.0 * lam)
    tau_star = math.log(u_star)

    def g(tau):
        return nu * tau - lam * math.exp(tau) - 0.5 * r2 * math.exp(-tau)

    g_star = g(tau_star)

    def edge(direction):
        step = 1.0
        while g(tau_star + direction * step) - g_star > -60.0:
            step *= 2.0
        return tau_star + direction * step

    def f(tau):
        return math.exp(g(tau) - g_star)

    total, err_total = 0.0, 0.0
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", integrate.IntegrationWarning)
        for a, b in ((edge(-1.0), tau_star), (tau_star, edge(1.0))):
            val, err = integrate.quad(f, a, b, epsabs=0.0, epsrel=epsrel, limit=400)
            total += val
            err_total += err
    if any(issubclass(w.category, integrate.IntegrationWarning) for w in caught):
        raise QuadratureError("Laplace-time quadrature did not converge", total * math.exp(g_star), err_total * math.exp(g_star))
    return total * math.exp(g_star)


def _laplace(lam: float, r2: np.ndarray, power: float, method: str) -> np.ndarray:
    if method == "bessel":
        return _laplace_bessel(lam, r2, power + 1.0)
    if method == "quad":
        return np.vectorize(lambda v: _laplace_quad(lam, float(v), power), otypes=[float])(r2)
    raise ValueError(f"unknown method {method!r}")


def _green_geometry(x, model: KernelModel | None):
    x = _as_points(x)
    d = x.shape[-1]
    if model is None:
        sig_inv, det = np.eye(d), 1.0
    else:
        if model.dimension != d:
            raise DomainError("point dimension does not match the model")
        if not model.constant_coefficients:
            raise DomainError("Green functions need constant coefficients")
        sig = model.sigma
        det = float(np.linalg.det(sig))
        if not det > 0:
            raise ModelRejected("a + rho(0) is not positive definite")
        sig_inv = np.linalg.inv(sig)
    y = x @ sig_inv.T
    r2 = np.einsum("...i,...i->...", x, y)
    return x, d, y, r2, det


def _check_lam(lam):
    if not (lam > 0 and math.isfinite(lam)):
        raise DomainError("lambda must be positive and finite")


def green_Q(lam: float, x, model: KernelModel | None = None, method: str = "quad"):
    """Green function ``Q^lam(x) = int_0^inf e^{-lam t} q_t(0, x) dt``.

    ``q_t`` is the one-particle transition density, Gaussian with covariance
    ``(a + rho(0)) t`` for a constant-coefficient ``model`` (standard heat
    kernel when ``model`` is ``None``).  ``method="quad"`` integrates in log
    time; ``method="bessel"`` uses the modified-Bessel closed form and is
    vectorized.
    """
    _check_lam(lam)
    x, d, _, r2, det = _green_geometry(x, model)
    if d >= 2 and np.any(r2 == 0):
        raise SingularityError("Q is infinite at x = 0 for d >= 2")
    power = -0.5 * d
    if method == "bessel" and d == 1:
        out = np.where(r2 == 0, math.sqrt(0.5 / lam), _laplace_bessel(lam, np.where(r2 == 0, 1.0, r2), power + 1.0))
    else:
        out = _laplace(lam, r2, power, method)
    return _scalar_or_array(TWO_PI ** (-0.5 * d) * det ** -0.5 * out)


def grad_green(lam: float, x, model: KernelModel | None = None, p: int | None = None, method: str = "quad"):
    """Gradient of :func:`green_Q`; component ``p`` if given, else the full vector."""
    _check_lam(lam)
    x, d, y, r2, det = _green_geometry(x, model)
    if np.any(r2 == 0):
        raise SingularityError("the Green-function gradient is undefined at x = 0")
    radial = TWO_PI ** (-0.5 * d) * det ** -0.5 * _laplace(lam, r2, -0.5 * d - 1.0, method)
    grad = -y * np.asarray(radial)[..., None]
    if p is None:
        return grad
    if not 0 <= p < d:
        raise DomainError(f"coordinate index {p} out of range")
    return _scalar_or_array(grad[..., p])


def g_tilde(lam: float, x, method: str = "quad"):
    """``G^lam(x) = int_0^inf e^{-lam s} s^{-1/2} phi_s(x) ds`` (``x != 0``).

    The integral diverges at ``x = 0`` in every dimension, including
    ``d = 1`` where the integrand behaves like ``1/s``.
    """
    _check_lam(lam)
    x = _as_points(x)
    d = x.shape[-1]
    r2 = _sqnorm(x)
    if np.any(r2 == 0):
        raise SingularityError("G-tilde diverges at x = 0")
    return _scalar_or_array(TWO_PI ** (-0.5 * d) * _laplace(lam, r2, -0.5 * d - 0.5, method))


@dataclass(frozen=True)
class GreenEvaluator:
    """Vectorized ``Q^lam`` and its gradient with a coincidence cutoff.

    Used along particle paths.  For ``d >= 2`` distances (in the metric of
    ``a + rho(0)``) below ``r_cut`` are clamped to ``r_cut``; gradients at an
    exact coincidence are set to zero.  ``__call__`` returns the values, the
    gradients and the number of clamped evaluations.
    """

    lam: float
    model: KernelModel
    r_cut: float = 1e-4

    def __post_init__(self):
        _check_lam(self.lam)
        sig = self.model.sigma
        object.__setattr__(self, "_sig_inv", np.linalg.inv(sig))
        object.__setattr__(self, "_det", float(np.linalg.det(sig)))

    def __call__(self, diff: np.ndarray, want_grad: bool = True):
        d = self.model.dimension
        y = diff @ self._sig_inv.T
        r2 = np.einsum("...i,...i->...", diff, y)
        r = np.sqrt(r2)
        k = math.sqrt(2.0 * self.lam)
        const = TWO_PI ** (-0.5 * d) * self._det**-0.5
        nclamp = 0
        if d == 1:
            e = np.exp(-k * r)
            val = const * math.sqrt(2.0 * math.pi) * e / k
            if not want_grad:
                return val, None, 0
            # d/dx e^{-k r}/k = -sign(x) e^{-k r}; use y = Sigma^{-1} x scaled by 1/r.
            with np.errstate(divide="ignore", invalid="ignore"):
                unit = np.where(r[..., None] > 0, y / r[..., None], 0.0)
            grad = -const * math.sqrt(2.0 * math.pi) * e[..., None] * unit
            return val, grad, 0
        small = r < self.r_cut
        nclamp = int(np.count_nonzero(small))
        rc = np.where(small, self.r_cut, r)
        z = k * rc
        nu = 1.0 - 0.5 * d
        # Q(r) = 2 const (r/k)^nu K_nu(k r); Q'(r) = -2 const k^{1-nu} r^nu K_{1-nu}(k r)
        ez = np.exp(-z)
        val = 2.0 * const * (rc / k) ** nu * special.kve(nu, z) * ez
        if not want_grad:
            return val, None, nclamp
        dq = -2.0 * const * k ** (1.0 - nu) * rc**nu * special.kve(1.0 - nu, z) * ez
        with np.errstate(divide="ignore", invalid="ignore"):
            unit = np.where(r[..., None] > 0, y / r[..., None], 0.0)
        grad = dq[..., None] * unit
        return val, grad, nclamp


# ---------------------------------------------------------------------------
# Lemma-type comparisons between Q-tilde and G-tilde
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SquareRatioResult:
    """Ratios of Green-function powers along a punctured radial grid."""

    lam: float
    dimension: int
    radii: np.ndarray
    ratio_square: np.ndarray  # (Q^lam)^2 / G^{2 lam}
    ratio_linear: np.ndarray  # Q^lam / G^{lam/2}
    bound_linear: float

    @property
    def K(self) -> float:
        return float(np.max(self.ratio_square))

    @property
    def linear_holds(self) -> bool:
        return bool(np.all(self.ratio_linear <= self.bound_linear * (1.0 + 1e-12)))

    def small_radius_growth(self, decades: float = 1.0) -> float:
        """Ratio of ``(Q)^2/G`` at the smallest radius to its value ``decades`` higher.

        Values near or below 1 mean no growth toward the origin.
        """
        r0 = self.radii.min()
        target = r0 * 10.0**decades
        i0 = int(np.argmin(self.radii))
        i1 = int(np.argmin(np.abs(np.log(self.radii / target))))
        return float(self.ratio_square[i0] / self.ratio_square[i1])

    def small_radius_slope(self, decades: float = 1.0) -> float:
        """Log-log slope of ``(Q)^2/G`` over the smallest ``decades`` of radii.

        A blow-up like ``r^{-alpha}`` shows as slope ``-alpha``; a ratio that
        levels off (or decays) toward the origin has slope near 0 (or positive).
        """
        r0 = self.radii.min()
        sel = self.radii <= r0 * 10.0**decades * (1 + 1e-12)
        slope, _ = np.polyfit(np.log(self.radii[sel]), np.log(self.ratio_square[sel]), 1)
        return float(slope)


def check_square_vs_gtilde(lam: float, xs, method: str = "bessel") -> SquareRatioResult:
    """Compare ``(Q^lam)^2`` with ``G^{2 lam}`` and ``Q^lam`` with ``G^{lam/2}``.

    ``xs`` is an ``(n, d)`` array of nonzero points.  Both functions are
    radial, so results are indexed by ``|x|``.
    """
    _check_lam(lam)
    xs = _as_points(xs)
    if xs.ndim != 2 or xs.shape[1] > 3:
        raise DomainError("xs must be an (n, d) array with d <= 3")
    radii = np.sqrt(_sqnorm(xs))
    if np.any(radii == 0):
        raise SingularityError("grid must exclude the origin")
    q = np.asarray(green_Q(lam, xs, method=method))
    g2 = np.asarray(g_tilde(2.0 * lam, xs, method=method))
    ghalf = np.asarray(g_tilde(0.5 * lam, xs, method=method))
    sq = q**2 / g2
    if not np.all(np.isfinite(sq)):
        raise QuadratureError("ratio diverged on the grid", float(np.nanmax(sq)), math.inf)
    return SquareRatioResult(lam, xs.shape[1], radii, sq, q / ghalf, max(1.0, lam**-0.5))


# ---------------------------------------------------------------------------
# Inequalities and mollifier
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundCheck:
    """Elementwise ``lhs <= bound`` comparison, kept in log space."""

    log_lhs: np.ndarray
    log_bound: np.ndarray
    rtol: float = 1e-12

    @property
    def holds(self) -> np.ndarray:
        return self.log_lhs <= self.log_bound + self.rtol

    @property
    def violations(self) -> int:
        return int(np.count_nonzero(~self.holds))

    @property
    def lhs(self) -> np.ndarray:
        return np.exp(self.log_lhs)

    @property
    def bound(self) -> np.ndarray:
        return np.exp(self.log_bound)


def exp_poly_bound(gamma, beta, v) -> BoundCheck:
    """``e^{-gamma v}(1+v)^beta <= 1`` if ``gamma > beta`` else ``<= (beta/gamma)^beta``."""
    gamma, beta, v = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (gamma, beta, v)))
    if np.any(gamma <= 0) or np.any(beta < 0) or np.any(v < 0):
        raise DomainError("need gamma > 0, beta >= 0, v >= 0")
    log_lhs = -gamma * v + beta * np.log1p(v)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_bound = np.where(gamma > beta, 0.0, np.where(beta > 0, beta * np.log(beta / gamma), 0.0))
    return BoundCheck(log_lhs, log_bound)


def mollifier_Ia(a, x):
    """Polynomial weight ``I_a(x) = (1 + |x|^2)^{-a/2}``."""
    a = np.asarray(a, dtype=float)
    if np.any(a < 0):
        raise DomainError("mollifier exponent must be nonnegative")
    x = _as_points(x)
    return _scalar_or_array((1.0 + _sqnorm(x)) ** (-0.5 * a))


def mollifier_shift(a, x, w) -> BoundCheck:
    """Shift inequality ``I_a(x + w) <= 2^{a/2} I_a(w)^{-1} I_a(x)``."""
    a = np.asarray(a, dtype=float)
    x, w = _as_points(x), _as_points(w)
    log_lhs = -0.5 * a * np.log1p(_sqnorm(x + w))
    log_bound = 0.5 * a * math.log(2.0) + 0.5 * a * np.log1p(_sqnorm(w)) - 0.5 * a * np.log1p(_sqnorm(x))
    return BoundCheck(*np.broadcast_arrays(log_lhs, log_bound))


def sweep_inequalities(n: int, rng: np.random.Generator) -> dict[str, int]:
    """Randomized sweeps of both inequalities; returns violation counts."""
    gamma = np.exp(rng.uniform(-4, 3, n))
    beta = np.where(rng.random(n) < 0.1, 0.0, np.exp(rng.uniform(-4, 3, n)))
    v = np.exp(rng.uniform(-8, 6, n))
    gamma_viol = exp_poly_bound(gamma, beta, v).violations
    viol = 0
    for d in (1, 2, 3):
        k = n // 3 + (1 if d <= n % 3 else 0)
        a = rng.uniform(0, 10, k)
        x = rng.standard_normal((k, d)) * np.exp(rng.uniform(-3, 4, (k, 1)))
        w = rng.standard_normal((k, d)) * np.exp(rng.uniform(-3, 4, (k, 1)))
        viol += mollifier_shift(a, x, w).violations
    return {"gamma": gamma_viol, "mollifier": viol}


# ---------------------------------------------------------------------------
# Gaussian-case constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelBounds:
    """Upper-bound constants ``(a1, a2)`` and two-sided Gaussian constants."""

    a1: float
    a2: float
    a_star: float
    b: float
    c_aron: float
    A_star: float

    def __post_init__(self):
        for name in ("a1", "a2", "a_star", "b", "c_aron", "A_star"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")


def _lsu_profile(r: int, s: int, d: int, t, y, p: int = 0):
    """Derivative of ``phi_t(y)``: ``r`` in time, ``s`` in coordinate ``p``."""
    y = _as_points(y)
    t = np.asarray(t, dtype=float)
    phi = np.asarray(gaussian_density(t, y))
    yp = y[..., p]
    if (r, s) == (0, 0):
        return phi
    if (r, s) == (0, 1):
        return -yp / t * phi
    if (r, s) == (0, 2):
        return (yp**2 / t**2 - 1.0 / t) * phi
    if (r, s) == (1, 0):
        return (_sqnorm(y) / (2.0 * t**2) - 0.5 * d / t) * phi
    raise DomainError("need 0 <= 2r + s <= 2")


def lsu_gaussian_constant(r: int, s: int, d: int, a2: float = 0.25) -> float:
    """Sharp ``a1`` for the heat kernel with the given ``a2 < 1/2``.

    After scaling ``v = y / sqrt(t)`` the weighted derivative depends on
    ``v`` only; its supremum is found by bounded 1-D maximization along the
    worst direction.
    """
    if not 0 < a2 < 0.5 and not ((r, s) == (0, 0) and a2 == 0.5):
        raise DomainError("a2 must lie in (0, 1/2)")
    c = 0.5 - a2
    norm = TWO_PI ** (-0.5 * d)
    if (r, s) == (0, 0):
        return norm
    profiles = {
        (0, 1): lambda u: u * math.exp(-c * u * u),
        (0, 2): lambda u: abs(u * u - 1.0) * math.exp(-c * u * u),
        (1, 0): lambda u: abs(0.5 * u * u - 0.5 * d) * math.exp(-c * u * u),
    }
    if (r, s) not in profiles:
        raise DomainError("need 0 <= 2r + s <= 2")
    f = profiles[(r, s)]
    grid = np.linspace(0.0, 12.0 / math.sqrt(c), 4001)
    vals = np.array([f(u) for u in grid])
    i = int(np.argmax(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(lambda u: -f(u), bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    return norm * max(vals[i], -res.fun)


def lsu_gaussian_check(r: int, s: int, ts, ys, a2: float = 0.25, p: int = 0) -> tuple[float, float]:
    """Fit ``a1`` on a ``(t, y)`` grid for the heat-kernel derivative bound.

    Returns ``(a1_est, a2)`` where ``a1_est`` is the grid maximum of
    ``|D phi_t(y)| t^{(d+2r+s)/2} exp(a2 |y|^2 / t)``.
    """
    ys = _as_points(ys)
    d = ys.shape[-1]
    if not 0 <= 2 * r + s <= 2:
        raise DomainError("need 0 <= 2r + s <= 2")
    ts = np.asarray(ts, dtype=float)
    tt = ts[:, None]
    deriv = np.abs(_lsu_profile(r, s, d, tt, ys[None, :, :], p))
    with np.errstate(divide="ignore"):
        log_w = np.log(deriv) + 0.5 * (d + 2 * r + s) * np.log(tt) + a2 * _sqnorm(ys)[None, :] / tt
    return float(np.exp(log_w.max())), a2


def transition_density(model: KernelModel, t, y):
    """One-particle transition density: Gaussian with covariance ``(a + rho(0)) t``."""
    y = _as_points(y)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("t must be positive")
    sig = model.sigma
    d = model.dimension
    quad = np.einsum("...i,ij,...j->...", y, np.linalg.inv(sig), y)
    out = (TWO_PI * t) ** (-0.5 * d) * np.linalg.det(sig) ** -0.5 * np.exp(-quad / (2.0 * t))
    return _scalar_or_array(out)


def aronson_constants(model: KernelModel) -> KernelBounds:
    """Two-sided Gaussian constants for a constant-coefficient model.

    With ``Sigma = a + rho(0)`` having extreme eigenvalues ``l_min, l_max``:
    ``b = l_min``, ``c = l_max``, ``a* = (l_min^d / det)^{1/2}``,
    ``A* = (l_max^d / det)^{1/2}``; the upper-bound pair is
    ``a1 = (2 pi)^{-d/2} det^{-1/2}``, ``a2 = 1 / (2 l_max)``.
    """
    sig = model.sigma
    d = model.dimension
    eig = np.linalg.eigvalsh(sig)
    if eig[0] <= 0:
        raise ModelRejected("a + rho(0) is not positive definite")
    det = float(np.prod(eig))
    lmin, lmax = float(eig[0]), float(eig[-1])
    return KernelBounds(
        a1=TWO_PI ** (-0.5 * d) * det**-0.5,
        a2=0.5 / lmax,
        a_star=math.sqrt(lmin**d / det),
        b=lmin,
        c_aron=lmax,
        A_star=math.sqrt(lmax**d / det),
    )
