"""Time-domain discretization of the bosonic environment.

The continuum of bath modes is replaced by one family of modes per time
segment [n eta, (n + 1) eta) and Legendre degree j <= j_max, each truncated
to its lowest d Fock levels.  Mode (j, n) couples to its bond through
C_j^n(t) = int v(t - s) P_j^n(s) ds.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as _poly
from scipy.interpolate import CubicSpline

from .model import CouplingFunction, _GL_NODES, _GL_WEIGHTS, integrate, vacuum_kernel_value


# ----------------------------------------------------------------------------
# mollifier and smooth cutoff


def _bump(y):
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    inside = np.abs(y) < 1
    out[inside] = np.exp(-1.0 / (1.0 - y[inside] ** 2))
    return out


@lru_cache(maxsize=1)
def _bump_tables():
    """Normalization and a spline of the mollifier's running integral."""
    edges = np.linspace(-1.0, 1.0, 4001)
    cells = np.array([_composite_cell(edges[k], edges[k + 1]) for k in range(edges.size - 1)])
    cum = np.concatenate([[0.0], np.cumsum(cells)])
    Z = cum[-1]
    return Z, CubicSpline(edges, cum / Z)


def _composite_cell(a, b):
    half, mid = 0.5 * (b - a), 0.5 * (a + b)
    return half * np.dot(_GL_WEIGHTS, _bump(mid + half * _GL_NODES))


def mollifier_normalization() -> float:
    """Z = int_{-1}^{1} exp(-1/(1 - y^2)) dy."""
    return float(_bump_tables()[0])


def mollifier(y):
    """Unit-mass bump supported on [-1, 1]."""
    return _bump(y) / mollifier_normalization()


def _mollifier_cdf(y):
    y = np.clip(np.asarray(y, dtype=float), -1.0, 1.0)
    return np.clip(_bump_tables()[1](y), 0.0, 1.0)


def mollifier_derivative_bounds(n: int) -> tuple:
    """sup_y |phi^(k)(y)| for k = 0..n of the unit-mass mollifier.

    Uses phi^(k) = P_k(y) (1 - y^2)^(-2k) phi with
    P_{k+1} = P_k' (1 - y^2)^2 + 4k y (1 - y^2) P_k - 2 y P_k.
    """
    y = np.linspace(-1 + 1e-6, 1 - 1e-6, 200001)
    one_m = 1 - y * y
    phi = mollifier(y)
    P = np.array([1.0])
    out = []
    for k in range(n + 1):
        vals = _poly.polyval(y, P) * one_m ** (-2.0 * k) * phi
        out.append(float(np.max(np.abs(vals))))
        dP = _poly.polyder(P) if P.size > 1 else np.array([0.0])
        sq = _poly.polymul([1, 0, -1], [1, 0, -1])
        P = _poly.polyadd(_poly.polyadd(_poly.polymul(dP, sq),
                                        _poly.polymul([0, 4 * k, 0, -4 * k], P)),
                          _poly.polymul([0, -2], P))
    return tuple(out)


def smooth_cutoff(v: CouplingFunction, t_star: float, width: float = 1.0) -> CouplingFunction:
    """Multiply ``v`` by a smooth window equal to 1 on [-t*, t*] and 0 beyond t* + 2w.

    The window is the indicator of [-t* - w, t* + w] convolved with the
    mollifier rescaled to [-w, w]; ``width = 1`` is the standard choice.
    """
    if t_star <= 0:
        raise ValueError("t_star must be positive")
    if width <= 0:
        raise ValueError("width must be positive")
    L = t_star + width
    base = v

    def window(t):
        return _mollifier_cdf((t + L) / width) - _mollifier_cdf((t - L) / width)

    def fn(t):
        t = np.asarray(t, dtype=float)
        w = window(t)
        out = np.zeros(t.shape, dtype=complex)
        nz = w != 0
        out[nz] = w[nz] * base(t[nz])
        return out

    # product rule with sup|window^(k)| = sup|phi^(k-1)| / w^k for k >= 1
    n = len(v.deriv_bounds)
    phis = mollifier_derivative_bounds(max(n - 1, 0))
    beta = [1.0] + [phis[k - 1] / width**k for k in range(1, n + 1)]
    vb = [v.c0] + list(v.deriv_bounds)
    bounds = tuple(sum(math.comb(mu, k) * beta[k] * vb[mu - k] for k in range(mu + 1))
                   for mu in range(1, n + 1))
    return CouplingFunction(fn, t_star + 2 * width, v.c0, bounds, v.name + "_cut",
                            dict(v.params, t_star=t_star, width=width))


# ----------------------------------------------------------------------------
# Legendre segment basis


def legendre_all(j_max: int, x) -> np.ndarray:
    """L_0..L_{j_max} at x by the Bonnet recurrence; shape (j_max + 1, *x.shape)."""
    x = np.asarray(x, dtype=float)
    out = np.empty((j_max + 1,) + x.shape)
    out[0] = 1.0
    if j_max >= 1:
        out[1] = x
    for k in range(1, j_max):
        out[k + 1] = ((2 * k + 1) * x * out[k] - k * out[k - 1]) / (k + 1)
    return out


def legendre(j: int, x):
    return legendre_all(j, x)[j]


def legendre_segment(n: int, j: int, eta: float, s):
    """Orthonormal degree-j Legendre function on segment [n eta, (n + 1) eta)."""
    if j < 0:
        raise ValueError("degree must be non-negative")
    s = np.asarray(s, dtype=float)
    x = 2.0 * (s - n * eta) / eta - 1.0
    inside = (s >= n * eta) & (s < (n + 1) * eta)
    return np.where(inside, math.sqrt((2 * j + 1) / eta) * legendre(j, x), 0.0)


# ----------------------------------------------------------------------------
# discretized environment


@dataclass(frozen=True)
class DiscretizedEnvironment:
    eta: float
    j_max: int
    d: int
    r: float
    t: float
    quad_tol: float = 1e-12

    def __post_init__(self):
        if self.eta <= 0 or self.j_max < 0 or self.d < 1:
            raise ValueError("need eta > 0, j_max >= 0, d >= 1")

    @property
    def n_range(self) -> tuple:
        return (-math.ceil(self.r / self.eta), math.ceil((self.r + self.t) / self.eta))

    def segments_touching(self, lo: float, hi: float) -> list:
        """Segments meeting the open interval (lo - r, hi + r)."""
        a, b = lo - self.r, hi + self.r
        n0 = math.floor(a / self.eta)
        out = []
        for n in range(n0, math.floor(b / self.eta) + 1):
            if (n + 1) * self.eta > a and n * self.eta < b:
                out.append(n)
        return out

    def modes(self) -> list:
        """All (j, n) labels that couple at some time in [0, t]."""
        return [(j, n) for n in self.segments_touching(0.0, self.t) for j in range(self.j_max + 1)]


def _segment_projections(env: DiscretizedEnvironment, v: CouplingFunction, t: float, n: int) -> np.ndarray:
    """C_j^n(t) for j = 0..j_max on one segment."""
    eta, r = env.eta, env.r
    a, b = max(n * eta, t - r), min((n + 1) * eta, t + r)
    if b <= a:
        return np.zeros(env.j_max + 1, dtype=complex)
    scale = np.array([math.sqrt((2 * j + 1) / eta) for j in range(env.j_max + 1)])

    def integrand(s):
        x = 2.0 * (s - n * eta) / eta - 1.0
        return (legendre_all(env.j_max, x) * scale[:, None] * v(t - s)[None, :]).T

    # vector-valued composite quadrature with panel doubling
    panels = max(1, int(math.ceil(4 * (b - a))))
    prev = _vec_gl(integrand, a, b, panels)
    for _ in range(10):
        panels *= 2
        cur = _vec_gl(integrand, a, b, panels)
        if np.max(np.abs(cur - prev)) <= env.quad_tol * max(1.0, np.max(np.abs(cur))):
            return cur
        prev = cur
    return cur


def _vec_gl(f, a, b, panels):
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return w @ f(x)


def coefficients(env: DiscretizedEnvironment, v: CouplingFunction, t: float) -> dict:
    """Nonzero coupling coefficients {(j, n): C_j^n(t)} at time t."""
    if not v.compact:
        raise ValueError("coefficients need a compact coupling; apply smooth_cutoff first")
    out = {}
    for n in env.segments_touching(t, t):
        vals = _segment_projections(env, v, t, n)
        for j, c in enumerate(vals):
            out[(j, n)] = complex(c)
    return out


def discretized_kernel(env: DiscretizedEnvironment, v: CouplingFunction, s: float, s_prime: float) -> complex:
    """K~(s, s') = sum_{j,n} C_j^n(s) conj(C_j^n(s'))."""
    a = coefficients(env, v, s)
    b = coefficients(env, v, s_prime)
    return complex(sum(c * np.conj(b[k]) for k, c in a.items() if k in b))


def kernel_error_grid(env: DiscretizedEnvironment, v: CouplingFunction, grid) -> float:
    """max over a (s, s') grid of |K~(s, s') - K(s - s')|."""
    grid = np.asarray(grid, dtype=float)
    coeffs = [coefficients(env, v, s) for s in grid]
    keys = sorted(set().union(*coeffs))
    idx = {k: i for i, k in enumerate(keys)}
    C = np.zeros((grid.size, len(keys)), dtype=complex)
    for row, cs in enumerate(coeffs):
        for k, c in cs.items():
            C[row, idx[k]] = c
    Kt = C @ C.conj().T
    taus = np.unique(np.round(grid[:, None] - grid[None, :], 14))
    Kexact = {tau: vacuum_kernel_value(v, float(tau), rel_tol=1e-13) for tau in taus}
    K = np.vectorize(lambda tau: Kexact[tau])(np.round(grid[:, None] - grid[None, :], 14))
    return float(np.max(np.abs(Kt - K)))


def measured_kappa(env: DiscretizedEnvironment, v: CouplingFunction, t: float, n_cells: int = 64) -> float:
    """Midpoint-rule estimate of int_0^t int_0^t |K~ - K| for one bond."""
    h = t / n_cells
    grid = (np.arange(n_cells) + 0.5) * h
    coeffs = [coefficients(env, v, s) for s in grid]
    keys = sorted(set().union(*coeffs))
    idx = {k: i for i, k in enumerate(keys)}
    C = np.zeros((grid.size, len(keys)), dtype=complex)
    for row, cs in enumerate(coeffs):
        for k, c in cs.items():
            C[row, idx[k]] = c
    lags = np.arange(n_cells) * h
    Kl = np.array([vacuum_kernel_value(v, float(x), rel_tol=1e-13) for x in lags])
    i = np.arange(n_cells)
    K = Kl[np.abs(i[:, None] - i[None, :])]
    return float(np.sum(np.abs(C @ C.conj().T - K)) * h * h)


def pointwise_kernel_bound(v: CouplingFunction, eta: float, j_max: int) -> float:
    """2 eta^(j+1) D_(j+1) C_0 r / (j+1)!  with j = j_max."""
    D = v.deriv_bound(j_max + 1)
    return 2 * eta ** (j_max + 1) * D * v.c0 * v.support_radius / math.factorial(j_max + 1)


def per_bond_kappa(v: CouplingFunction, eta: float, j_max: int, t: float) -> float:
    """Bound on int_0^t int_0^t |K~ - K| for one bond."""
    D = v.deriv_bound(j_max + 1)
    r = v.support_radius
    return 4 * t * eta ** (j_max + 1) * D * (2 * r + eta) * v.c0 * r / math.factorial(j_max + 1)


def kernel_error_budget(v: CouplingFunction, eta: float, j_max: int, t: float, N: int) -> float:
    """Channel-error bound exp(2 kappa) - 1 with kappa summed over N - 1 bonds."""
    kappa = max(N - 1, 1) * per_bond_kappa(v, eta, j_max, t)
    try:
        return math.expm1(2 * kappa)
    except OverflowError:
        return math.inf


@dataclass(frozen=True)
class DiscretizationChoice:
    env: DiscretizedEnvironment
    d_real: float
    budget: float | None


def truncation_level(N: int, t: float, delta: float, eta: float, r: float) -> float:
    """log(N^2 t^2 r^2 / (delta eta^(3/2))) with unit prefactor (unrounded)."""
    return math.log(N * N * t * t * r * r / (delta * eta**1.5))


def select_discretization(N: int, t: float, delta: float, p: int, r: float,
                          v: CouplingFunction | None = None) -> DiscretizationChoice:
    """Segment width, degree and truncation from the unit-prefactor scaling laws."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if p < 1:
        raise ValueError("p must be >= 1")
    j_max = int(p)
    eta = (delta / (N * t * r * r)) ** (1.0 / (j_max + 1))
    if eta > r:
        warnings.warn(f"segment width {eta:.3g} exceeds support radius {r}; clamped", stacklevel=2)
        eta = r
    d_real = truncation_level(N, t, delta, eta, r)
    d = max(1, math.ceil(d_real))
    budget = None
    if v is not None and len(v.deriv_bounds) > j_max:
        budget = kernel_error_budget(v, eta, j_max, t, N)
    return DiscretizationChoice(DiscretizedEnvironment(eta, j_max, d, r, t), d_real, budget)


# ----------------------------------------------------------------------------
# occupation tails


def occupation_tail(psi: np.ndarray, dims, axis: int, d: int) -> float:
    """Norm of the component of ``psi`` with at least ``d`` quanta in factor ``axis``."""
    dims = tuple(int(x) for x in dims)
    if not 0 <= axis < len(dims):
        raise IndexError(f"mode axis {axis} outside a {len(dims)}-factor state")
    T = np.asarray(psi).reshape(dims)
    if d >= dims[axis]:
        return 0.0
    tail = np.take(T, np.arange(d, dims[axis]), axis=axis)
    return float(np.linalg.norm(tail))


def annihilation(d: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, d, dtype=float)), 1).astype(complex)


# ----------------------------------------------------------------------------
# kernel-error scan


def fit_slope(x, y, floor: float = 1e-11):
    """Least-squares slope of log y against log x, discarding y below ``floor``.

    Returns (slope, intercept, r2, kept_mask).
    """
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    keep = y > floor
    if keep.sum() < 2:
        return float("nan"), float("nan"), float("nan"), keep
    lx, ly = np.log(x[keep]), np.log(y[keep])
    A = np.vstack([lx, np.ones_like(lx)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ np.array([slope, icpt])
    ss = np.sum((ly - ly.mean()) ** 2)
    r2 = 1 - np.sum((ly - pred) ** 2) / ss if ss > 0 else 1.0
    return float(slope), float(icpt), float(r2), keep


def kernel_scan(v: CouplingFunction, j_max: int, etas, t: float = 1.0, n_grid: int = 21) -> list:
    """max|K~ - K| on a grid over [0, t]^2 for each segment width.

    Rows: dicts with keys eta, j_max, max_abs_err, kernel_bound, fitted_order;
    the fitted order (same on every row) is the log-log slope over the scan.
    """
    grid = np.linspace(0.0, t, n_grid)
    rows = []
    for eta in etas:
        env = DiscretizedEnvironment(float(eta), j_max, 1, v.support_radius, t)
        rows.append({"eta": float(eta), "j_max": j_max,
                     "max_abs_err": kernel_error_grid(env, v, grid),
                     "kernel_bound": pointwise_kernel_bound(v, float(eta), j_max)})
    slope, *_ = fit_slope([r["eta"] for r in rows], [r["max_abs_err"] for r in rows])
    for r in rows:
        r["fitted_order"] = slope
    return rows
