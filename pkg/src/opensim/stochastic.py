"""Classical-noise unravelings of non-dissipative open dynamics.

Two ensembles of unitary circuits are provided:

* Gaussian increments with a smooth real memory kernel, averaged over
  staged product-formula circuits (non-Markovian, Hermitian jumps);
* Wiener paths driving an interaction-picture Hamiltonian (Markovian,
  Hermitian commuting jumps).

Trajectory k draws from ``default_rng([seed, k])``; trajectories come in
antithetic pairs (z, -z) sharing one draw, and block sums are reduced in a
fixed order, so estimates do not depend on the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .evolution import bond_groups, bond_local_terms, bond_sites
from .linops import Channel, dagger, embed, expm_hermitian, hermiticity_defect
from .model import _GL_NODES, _GL_WEIGHTS, CouplingFunction, LatticeModel, validate_model
from .trotter import ProductFormula, evolve_piecewise, stage_schedule

BLOCK = 256
COV_JITTER = 1e-12
COV_NEG_TOL = 1e-10


# ----------------------------------------------------------------------------
# kernels


@dataclass(frozen=True)
class WhiteNoise:
    """Delta-correlated kernel strength * delta(t - t')."""

    strength: float = 1.0


@dataclass(frozen=True)
class SmoothKernel:
    """Real even kernel given as a vectorized function of the lag."""

    fn: Callable[[np.ndarray], np.ndarray]
    support: float = math.inf
    name: str = "kernel"

    def __call__(self, tau):
        tau = np.abs(np.asarray(tau, dtype=float))
        return np.where(tau <= self.support, np.real(self.fn(tau)), 0.0)


def kernel_from_coupling(v: CouplingFunction, panels: int = 64) -> SmoothKernel:
    """K(tau) = int v(u) v(u - tau) du for a real compact coupling, by fixed
    composite Gauss-Legendre quadrature over the support (smooth integrand)."""
    if not v.compact:
        raise ValueError("kernel_from_coupling needs a compact coupling")
    r = v.support_radius
    edges = np.linspace(-r, r, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    u = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    vu = v(u)
    if np.max(np.abs(vu.imag)) > 1e-14 * max(1.0, np.max(np.abs(vu))):
        raise ValueError("Gaussian unraveling needs a real coupling (real symmetric kernel)")
    vu = vu.real * w

    def fn(tau):
        tau = np.atleast_1d(tau)
        return (vu[None, :] * v(u[None, :] - tau[:, None]).real).sum(axis=1)

    return SmoothKernel(fn, 2 * r, f"vacuum({v.name})")


def _second_antiderivative(kernel, x: np.ndarray) -> np.ndarray:
    """F(x) = int_0^|x| (|x| - u) K(u) du, so that F'' = K and F is even."""
    x = np.abs(np.asarray(x, dtype=float))
    if isinstance(kernel, WhiteNoise):
        return kernel.strength * x / 2
    out = np.zeros_like(x)
    for k, xk in enumerate(x.ravel()):
        if xk == 0:
            continue
        hi = min(xk, kernel.support)
        panels = max(1, int(math.ceil(hi / 0.05)))
        edges = np.linspace(0.0, hi, panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        u = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
        w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
        out.flat[k] = float(np.sum(w * (xk - u) * kernel(u)))
    return out


@dataclass(frozen=True)
class GaussianIncrementSet:
    intervals: tuple    # (bond, t1, t2); t2 < t1 is an oriented (negative) interval
    cov: np.ndarray
    chol: np.ndarray


def increment_covariance(kernel, intervals: Sequence[tuple]) -> GaussianIncrementSet:
    """Covariance of xi_l^{t2,t1} = int_{t1}^{t2} xi_l: delta_{ll'} int int K(s - s')."""
    intervals = tuple((int(b), float(a), float(c)) for b, a, c in intervals)
    n = len(intervals)
    cov = np.zeros((n, n))
    bonds = np.array([iv[0] for iv in intervals])
    lo = np.array([iv[1] for iv in intervals])
    hi = np.array([iv[2] for iv in intervals])
    # distinct lag values appearing in the four-corner formula
    lags = np.concatenate([(hi[:, None] - lo[None, :]).ravel(), (hi[:, None] - hi[None, :]).ravel(),
                           (lo[:, None] - lo[None, :]).ravel()])
    uniq, inv = np.unique(np.round(np.abs(lags), 13), return_inverse=True)
    F = _second_antiderivative(kernel, uniq)[inv]
    m = n * n
    F_hl, F_hh, F_ll = F[:m].reshape(n, n), F[m:2 * m].reshape(n, n), F[2 * m:].reshape(n, n)
    # int_{a}^{b} int_{c}^{d} K(s - s') = F(b - c) - F(a - c) - F(b - d) + F(a - d)
    cov = F_hl - F_ll - F_hh + F_hl.T
    cov = np.where(bonds[:, None] == bonds[None, :], cov, 0.0)
    cov = 0.5 * (cov + cov.T)
    return GaussianIncrementSet(intervals, cov, _cholesky(cov))


def _cholesky(cov: np.ndarray) -> np.ndarray:
    if cov.size == 0 or not np.any(cov):
        return np.zeros_like(cov)
    scale = max(1.0, float(np.max(np.abs(np.diag(cov)))))
    lam = float(np.min(np.linalg.eigvalsh(cov)))
    if lam < -COV_NEG_TOL * scale:
        raise ValueError(f"increment covariance is indefinite (min eigenvalue {lam:.3e}); invalid kernel")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return np.linalg.cholesky(cov + (COV_JITTER * scale + max(0.0, -lam)) * np.eye(cov.shape[0]))


def sample_gaussian(inc: GaussianIncrementSet, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return inc.chol @ rng.standard_normal(inc.chol.shape[0])


# ----------------------------------------------------------------------------
# ensemble accumulation


@dataclass(frozen=True)
class EnsembleEstimate:
    channel: Channel
    stderr: np.ndarray
    distance_noise: float    # Monte-Carlo scale of channel_distance(estimate, truth)
    n_samples: int


N_GROUPS = 8


def _pair_superops(U_plus: np.ndarray, U_minus: np.ndarray) -> np.ndarray:
    """Per-pair average of conj(U) (x) U, shape (pairs, D^2, D^2)."""
    D = U_plus.shape[1]
    S = np.einsum("pab,pcd->pacbd", U_plus.conj(), U_plus).reshape(-1, D * D, D * D)
    S += np.einsum("pab,pcd->pacbd", U_minus.conj(), U_minus).reshape(-1, D * D, D * D)
    return 0.5 * S


def _run_blocks(block_fn, n_pairs: int, jobs: int):
    spans = [(s, min(s + BLOCK, n_pairs)) for s in range(0, n_pairs, BLOCK)]
    if jobs > 1 and len(spans) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(block_fn, spans))
    return [block_fn(sp) for sp in spans]


def _group_of(idx: np.ndarray, n_pairs: int) -> np.ndarray:
    return (idx * N_GROUPS) // n_pairs


def _block_stats(S: np.ndarray, lo: int, hi: int, n_pairs: int):
    groups = np.zeros((N_GROUPS,) + S.shape[1:], dtype=complex)
    np.add.at(groups, _group_of(np.arange(lo, hi), n_pairs), S)
    return S.sum(axis=0), (np.abs(S) ** 2).sum(axis=0), groups


def _aggregate(results, n_pairs: int, dims) -> EnsembleEstimate:
    from .linops import channel_distance

    # ordered reduction: identical for any worker count
    total = sum(r[0] for r in results)
    total_sq = sum(r[1] for r in results)
    groups = sum(r[2] for r in results)
    mean = total / n_pairs
    var = np.maximum(total_sq / n_pairs - np.abs(mean) ** 2, 0.0)
    stderr = np.sqrt(var / max(n_pairs - 1, 1))
    est = Channel(mean, dims, estimate=True, stderr=stderr)
    sizes = np.bincount(_group_of(np.arange(n_pairs), n_pairs), minlength=N_GROUPS)
    spread = [channel_distance(Channel(groups[g] / sizes[g], dims, estimate=True), est)
              for g in range(N_GROUPS) if sizes[g]]
    noise = float(np.mean(spread)) / math.sqrt(max(len(spread) - 1, 1))
    return EnsembleEstimate(est, stderr, noise, 2 * n_pairs)


# ----------------------------------------------------------------------------
# Gaussian circuit ensemble (non-Markovian, non-dissipative)


def _check_nondissipative(model: LatticeModel):
    if model.markovian:
        raise ValueError("Gaussian ensemble needs a model with structured (non-Markovian) couplings")
    for k, (_, J) in enumerate(model.j_terms):
        if hermiticity_defect(J) > 1e-12:
            raise ValueError(f"jump {k} is not Hermitian; the Gaussian unraveling needs J = J^dag")


def ensemble_intervals(model: LatticeModel, formula: ProductFormula, t: float, T: int,
                       substeps: int) -> list:
    """Every noise sub-interval (bond, t1, t2) in circuit order."""
    groups = bond_groups(model)
    out = []
    for g, t1, t2 in stage_schedule(formula, t, T):
        h = (t2 - t1) / substeps
        for b in groups[g]:
            for k in range(substeps):
                out.append((b, t1 + k * h, t1 + (k + 1) * h))
    return out


class _GaussianCircuit:
    """Vectorized sampler of U_z for batches of increment vectors."""

    def __init__(self, model, formula, t, T, substeps, inc: GaussianIncrementSet):
        H_loc, J_loc = bond_local_terms(model)
        dims = model.dims
        self.D = model.dim
        self.H = [embed(H_loc[b], bond_sites(model, b)[0], dims) for b in range(model.n_bonds)]
        J = [embed(J_loc[b], bond_sites(model, b)[0], dims) for b in range(model.n_bonds)]
        self.J_eig = [np.linalg.eigh(Jb) for Jb in J]
        self.inc = inc
        self._half = {}

    def half_step(self, b, h):
        key = (b, round(h, 15))
        U = self._half.get(key)
        if U is None:
            U = expm_hermitian(self.H[b], h / 2)
            self._half[key] = U
        return U

    def unitaries(self, xi: np.ndarray) -> np.ndarray:
        """xi: (batch, n_intervals) -> U: (batch, D, D)."""
        batch = xi.shape[0]
        U = np.broadcast_to(np.eye(self.D, dtype=complex), (batch, self.D, self.D)).copy()
        for k, (b, t1, t2) in enumerate(self.inc.intervals):
            half = self.half_step(b, t2 - t1)
            lam, V = self.J_eig[b]
            # exp(-i J xi) = V diag(exp(-i lam xi)) V^dag
            phase = np.exp(-1j * xi[:, k, None] * lam[None, :])
            kick = np.einsum("ij,bj,kj->bik", V, phase, V.conj())
            U = half @ (kick @ (half @ U))
        return U


def ensemble_channel_nondissipative(model: LatticeModel, formula: ProductFormula, t: float, T: int,
                                    n_samples: int, seed: int, kernel=None, substeps: int = 1,
                                    jobs: int = 1) -> EnsembleEstimate:
    """Monte-Carlo average of U_z rho U_z^dag over Gaussian increments.

    Each bond stage over a sub-interval of length h is
    exp(-i H_b h/2) exp(-i J_b xi) exp(-i H_b h/2), xi the integrated noise.
    ``kernel`` defaults to the vacuum kernel of each bond's coupling (all
    bonds must then share one coupling).
    """
    _check_nondissipative(model)
    if n_samples < 2 or n_samples % 2:
        raise ValueError("n_samples must be an even number >= 2 (antithetic pairs)")
    if kernel is None:
        if any(v is not model.coupling[0] for v in model.coupling):
            raise ValueError("bonds have different couplings; pass an explicit kernel")
        kernel = kernel_from_coupling(model.coupling[0])
    inc = increment_covariance(kernel, ensemble_intervals(model, formula, t, T, substeps))
    circuit = _GaussianCircuit(model, formula, t, T, substeps, inc)
    n_pairs = n_samples // 2
    block = _GaussianBlock(circuit, seed, n_pairs)
    return _aggregate(_run_blocks(block, n_pairs, jobs), n_pairs, model.dims)


class _GaussianBlock:
    def __init__(self, circuit, seed, n_pairs):
        self.circuit, self.seed, self.n_pairs = circuit, seed, n_pairs

    def __call__(self, span):
        lo, hi = span
        chol = self.circuit.inc.chol
        z = np.stack([np.random.default_rng([self.seed, p]).standard_normal(chol.shape[0])
                      for p in range(lo, hi)]) if chol.size else np.zeros((hi - lo, 0))
        xi = z @ chol.T
        S = _pair_superops(self.circuit.unitaries(xi), self.circuit.unitaries(-xi))
        return _block_stats(S, lo, hi, self.n_pairs)


# ----------------------------------------------------------------------------
# Wiener paths and the interaction-picture unraveling


@dataclass(frozen=True)
class WienerPath:
    grid: np.ndarray       # (K + 1,) uniform times starting at 0
    values: np.ndarray     # (n_bonds, K + 1), values[:, 0] = 0
    seed: object

    @property
    def eps(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def at(self, t: float) -> np.ndarray:
        k = int(round(t / self.eps))
        if k < 0 or k >= self.grid.size or abs(k * self.eps - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"time {t} is not on the path grid (0..{self.grid[-1]}, step {self.eps})")
        return self.values[:, k]


def _grid_steps(t: float, eps: float) -> int:
    if eps <= 0:
        raise ValueError("eps must be positive")
    K = int(round(t / eps))
    if K < 1 or abs(K * eps - t) > 1e-9 * max(1.0, t):
        raise ValueError(f"t = {t} is not an integer multiple of eps = {eps}")
    return K


def sample_wiener(n_bonds: int, t: float, eps: float, seed) -> WienerPath:
    K = _grid_steps(t, eps)
    rng = np.random.default_rng(seed)
    inc = rng.normal(0.0, math.sqrt(eps), size=(n_bonds, K))
    values = np.concatenate([np.zeros((n_bonds, 1)), np.cumsum(inc, axis=1)], axis=1)
    return WienerPath(np.arange(K + 1) * eps, values, seed)


def _check_commuting_hermitian(model: LatticeModel):
    if not model.markovian:
        raise ValueError("Wiener unraveling needs a Markovian model")
    for k, (_, J) in enumerate(model.j_terms):
        if hermiticity_defect(J) > 1e-12:
            raise ValueError(f"jump {k} is not Hermitian")
    rep = validate_model(model, markovian_commuting=True)
    if rep.commutator_defect is not None and rep.commutator_defect > 1e-10:
        raise ValueError(f"jumps do not commute (defect {rep.commutator_defect:.3e})")


def _support(site: int, op: np.ndarray) -> set:
    return set(range(site, site + (1 if op.shape[0] == 2 else 2)))


class _Frame:
    """Per-term conjugation data for H_bar = prod e^{iJW} h prod e^{-iJW}."""

    def __init__(self, model: LatticeModel):
        dims = model.dims
        self.D = model.dim
        self.terms = [model.full(s, op) for s, op in model.h_terms]
        supports = [_support(s, op) for s, op in model.h_terms]
        self.jumps = [np.linalg.eigh(model.full(s, J)) for s, J in model.j_terms]
        jsup = [_support(s, J) for s, J in model.j_terms]
        # only overlapping jumps fail to commute with a term
        self.touching = [[i for i, js in enumerate(jsup) if js & sup] for sup in supports]
        self.n_jumps = len(self.jumps)
        del dims

    def rotation(self, which, W):
        """prod_i exp(-i J_i W_i) over the listed jumps; W (batch, n_jumps)."""
        batch = W.shape[0]
        R = np.broadcast_to(np.eye(self.D, dtype=complex), (batch, self.D, self.D)).copy()
        for i in which:
            lam, V = self.jumps[i]
            phase = np.exp(-1j * W[:, i, None] * lam[None, :])
            R = np.einsum("ij,bj,kj->bik", V, phase, V.conj()) @ R
        return R

    def hamiltonian(self, W):
        batch = W.shape[0]
        H = np.zeros((batch, self.D, self.D), dtype=complex)
        for h, which in zip(self.terms, self.touching):
            if not which:
                H += h
                continue
            R = self.rotation(which, W)
            H += dagger_batch(R) @ h @ R
        return H


def dagger_batch(A):
    return np.conj(np.swapaxes(A, -1, -2))


def interaction_hamiltonian(model: LatticeModel, path: WienerPath, t: float) -> np.ndarray:
    """H_bar(t): each term conjugated by the jump rotations that overlap it."""
    _check_commuting_hermitian(model)
    W = path.at(t)
    if W.size != len(model.j_terms):
        raise ValueError(f"path has {W.size} components, model has {len(model.j_terms)} jumps")
    return _Frame(model).hamiltonian(W[None, :])[0]


def _batched_expm(H: np.ndarray, h: float) -> np.ndarray:
    w, V = np.linalg.eigh(H)
    return (V * np.exp(-1j * h * w)[:, None, :]) @ dagger_batch(V)


def _wiener_unitaries(frame: _Frame, W: np.ndarray, eps: float, stride: int) -> np.ndarray:
    """U = R(W(t)) T exp(-i int H_bar), midpoint rule on steps of 2*stride*eps.

    W: (batch, n_jumps, K + 1) path values on the fine grid.
    """
    batch, _, K1 = W.shape
    K = K1 - 1
    step = 2 * stride
    if K % step:
        raise ValueError(f"path grid of {K} steps does not divide into midpoint steps of {step}")
    U = np.broadcast_to(np.eye(frame.D, dtype=complex), (batch, frame.D, frame.D)).copy()
    for k in range(0, K, step):
        Hbar = frame.hamiltonian(W[:, :, k + stride])
        U = _batched_expm(Hbar, step * eps) @ U
    return frame.rotation(range(frame.n_jumps), W[:, :, -1]) @ U


class _WienerBlock:
    def __init__(self, frame, t, eps, seed, n_pairs, stride):
        self.frame, self.t, self.eps, self.seed = frame, t, eps, seed
        self.n_pairs, self.stride = n_pairs, stride
        self.K = _grid_steps(t, eps)

    def paths(self, lo, hi):
        nj = self.frame.n_jumps
        inc = np.stack([np.random.default_rng([self.seed, p]).normal(0.0, math.sqrt(self.eps),
                                                                     size=(nj, self.K))
                        for p in range(lo, hi)])
        return np.concatenate([np.zeros((hi - lo, nj, 1)), np.cumsum(inc, axis=2)], axis=2)

    def __call__(self, span):
        lo, hi = span
        W = self.paths(lo, hi)
        S = _pair_superops(_wiener_unitaries(self.frame, W, self.eps, self.stride),
                           _wiener_unitaries(self.frame, -W, self.eps, self.stride))
        return _block_stats(S, lo, hi, self.n_pairs)


def unraveled_channel(model: LatticeModel, t: float, eps: float, n_samples: int, seed: int,
                      jobs: int = 1, stride: int = 1) -> EnsembleEstimate:
    """Average of W(t) U_bar rho U_bar^dag W(t)^dag over Wiener paths of step eps.

    The interaction-picture propagator uses midpoint steps of 2 * stride * eps
    whose midpoints fall on path grid points; ``stride = 2`` reuses the same
    paths at half the time resolution.
    """
    _check_commuting_hermitian(model)
    if n_samples < 2 or n_samples % 2:
        raise ValueError("n_samples must be an even number >= 2 (antithetic pairs)")
    frame = _Frame(model)
    n_pairs = n_samples // 2
    block = _WienerBlock(frame, t, eps, seed, n_pairs, stride)
    if block.K % (2 * stride):
        raise ValueError(f"t / eps = {block.K} must be a multiple of {2 * stride}")
    return _aggregate(_run_blocks(block, n_pairs, jobs), n_pairs, model.dims)


def trajectory_states(model: LatticeModel, t: float, eps: float, seeds: Sequence[int], psi0: np.ndarray,
                      stride: int = 1) -> np.ndarray:
    """Final pure states for individual paths (seed k -> path k), for consistency checks."""
    _check_commuting_hermitian(model)
    frame = _Frame(model)
    block = _WienerBlock(frame, t, eps, seeds[0], 1, stride)
    W = np.stack([np.concatenate([np.zeros((frame.n_jumps, 1)),
                                  np.cumsum(np.random.default_rng(s).normal(0.0, math.sqrt(eps),
                                                                            size=(frame.n_jumps, block.K)),
                                            axis=1)], axis=1) for s in seeds])
    return _wiener_unitaries(frame, W, eps, stride) @ psi0


# ----------------------------------------------------------------------------
# regularity


FLAT = "flat/undefined"


def holder_exponent(path: WienerPath, component: int = 0):
    """Slope of log max|W(s + lag) - W(s)| against log lag over dyadic lags."""
    x = np.asarray(path.values)[component] if np.ndim(path.values) > 1 else np.asarray(path.values)
    if x.size < 2**10:
        raise ValueError("holder_exponent needs at least 1024 path points")
    lags, incs = [], []
    lag = 1
    while lag <= x.size // 4:
        lags.append(lag * path.eps)
        incs.append(float(np.max(np.abs(x[lag:] - x[:-lag]))))
        lag *= 2
    incs = np.array(incs)
    if np.all(incs == 0):
        return FLAT
    keep = incs > 0
    slope, _ = np.polyfit(np.log(np.array(lags)[keep]), np.log(incs[keep]), 1)
    return float(slope)
