"""Markovian generators, their exact propagators, and locally dilated Hamiltonians.

A dilation replaces one time step of a Lindblad evolution by a unitary on the
system plus one ancilla qudit per jump operator, each ancilla starting in
|0> and traced out afterwards.  Orders 1, 2 and 3 cancel the remainder
through O(dt), O(dt^2) and O(dt^3) respectively.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .envdisc import fit_slope
from .linops import (Channel, channel_distance, channel_from_purifications, commutator, dagger,
                     expm_hermitian, spectral_norm)
from .model import LatticeModel, validate_model

CP_TOL = 1e-8
DENSE_LIMIT = 2048
ANCILLA_DIM = {1: 2, 2: 3, 3: 5}


@dataclass(frozen=True)
class Liouvillian:
    superop: np.ndarray
    dims: tuple

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    def apply(self, rho: np.ndarray) -> np.ndarray:
        D = self.dim
        return (self.superop @ rho.reshape(-1, order="F")).reshape(D, D, order="F")


def _left(A):
    return np.kron(np.eye(A.shape[0]), A)


def _right(B):
    return np.kron(B.T, np.eye(B.shape[0]))


def liouvillian_from_operators(H: np.ndarray, jumps: Sequence[np.ndarray], dims) -> Liouvillian:
    """-i[H, .] + sum_J (J . J^dag - {J^dag J, .}/2) in column-stacking form."""
    L = -1j * (_left(H) - _right(H))
    for J in jumps:
        JdJ = dagger(J) @ J
        L = L + np.kron(J.conj(), J) - 0.5 * _left(JdJ) - 0.5 * _right(JdJ)
    return Liouvillian(L, tuple(dims))


def liouvillian(model: LatticeModel) -> Liouvillian:
    if not model.markovian:
        raise ValueError(f"model {model.name!r} has a structured bath; a Liouvillian needs a Markovian model")
    if not model.j_terms:
        warnings.warn(f"model {model.name!r} has no jump terms; Liouvillian is purely Hamiltonian",
                      stacklevel=2)
    return liouvillian_from_operators(model.hamiltonian(), model.jumps(), model.dims)


def exact_propagator(L: Liouvillian, t: float) -> Channel:
    """exp(L t) by scaling-and-squaring Pade, rejected if visibly non-CP."""
    if t < 0:
        raise ValueError("propagation time must be non-negative")
    ch = Channel(scipy.linalg.expm(L.superop * t), L.dims)
    lam = ch.min_choi_eigenvalue()
    if lam < -CP_TOL:
        raise ValueError(f"propagator is not completely positive (min Choi eigenvalue {lam:.3e}); "
                         "the Liouvillian is mis-assembled")
    return ch


# ----------------------------------------------------------------------------
# dilated Hamiltonians


@dataclass(frozen=True)
class DilatedHamiltonian:
    """H_0 (x) I + sum_i sum_j (S_{j,i} (x) |j><0|_i + h.c.), system factors first."""

    order: int
    dt: float
    op: object          # dense ndarray or scipy sparse matrix
    sys_dims: tuple
    d_anc: int
    n_anc: int

    @property
    def dim(self) -> int:
        return int(np.prod(self.sys_dims)) * self.d_anc**self.n_anc

    def dense(self) -> np.ndarray:
        return self.op.toarray() if sp.issparse(self.op) else np.asarray(self.op)

    def norm(self) -> float:
        return spectral_norm(self.dense())


def _single_terms_order1(H, J, dt):
    return np.zeros_like(H), {1: J / math.sqrt(dt)}


def _single_terms_order2(H, J, dt):
    Jd = dagger(J)
    H0 = dt * (-H @ Jd @ J / 12 + Jd @ H @ J / 6 - Jd @ J @ H / 12)
    S1 = J / math.sqrt(dt) + math.sqrt(dt) * (-Jd @ J @ J / 4 - J @ Jd @ J / 12)
    S2 = J @ J / math.sqrt(2)
    return H0, {1: S1, 2: S2}


def _single_terms_order3_expanded(H, J, dt):
    """Order-3 per-jump terms with every product written out."""
    Jd = dagger(J)
    M = Jd @ J
    H0 = dt * (-H @ M / 12 + Jd @ H @ J / 6 - M @ H / 12)
    H0 = H0 + dt**2 * (
        -M @ M @ H / 120 - H @ M @ M / 120 + M @ H @ M / 180 + Jd @ J @ Jd @ H @ J / 180
        + Jd @ H @ J @ Jd @ J / 180 - Jd @ H @ Jd @ J @ J / 18 + Jd @ Jd @ H @ J @ J / 9
        - Jd @ Jd @ J @ H @ J / 18)
    S1 = (J - dt * J @ Jd @ J / 12 - dt * Jd @ J @ J / 4 - dt**2 * J @ Jd @ J @ Jd @ J / 120
          + dt**2 * Jd @ J @ Jd @ J @ J / 24
          + dt**2 * (-1j * J @ Jd @ J @ H / 24 + 1j * J @ Jd @ H @ J / 24 + 1j * Jd @ J @ H @ J / 24
                     - 1j * Jd @ J @ J @ H / 24 + 1j * Jd @ H @ J @ J / 12
                     - 1j * H @ Jd @ J @ J / 12)) / math.sqrt(dt)
    S2 = math.sqrt(2) * (J @ J - dt * J @ Jd @ J @ J / 6 - dt * Jd @ J @ J @ J / 6
                         + 2 * dt * (-1j * J @ H @ J / 6 + 1j * J @ J @ H / 12
                                     + 1j * H @ J @ J / 12)) / 2
    S3 = math.sqrt(6) * math.sqrt(dt) * J @ J @ J / 6
    S4 = (-math.sqrt(3) * math.sqrt(dt) * J @ Jd @ J / 12 + math.sqrt(3) * math.sqrt(dt) * Jd @ J @ J / 12
          + math.sqrt(3) * 1j * math.sqrt(dt) * (-J @ H + H @ J) / 6)
    return H0, {1: S1, 2: S2, 3: S3, 4: S4}


def _single_terms_order3_commutator(H, J, dt):
    """Order-3 per-jump terms written through commutators with H."""
    Jd = dagger(J)
    M = Jd @ J
    c = commutator
    H0 = dt * (-c(H, Jd) @ J / 12 - Jd @ c(J, H) / 12)
    H0 = H0 + dt**2 * (-M @ c(M, H) / 360 - c(H, M) @ M / 360 + M @ Jd @ c(H, J) / 180
                       + c(Jd, H) @ J @ M / 180 - Jd @ c(H, Jd) @ J @ J / 18
                       - Jd @ Jd @ c(J, H) @ J / 18)
    S1 = (J - dt * J @ M / 12 - dt * Jd @ J @ J / 4 - dt**2 * J @ M @ M / 120
          + dt**2 * M @ Jd @ J @ J / 24
          + dt**2 * (-1j * J @ Jd @ c(J, H) / 24 + 1j * M @ c(H, J) / 24
                     + 1j * c(Jd, H) @ J @ J / 12)) / math.sqrt(dt)
    S2 = math.sqrt(0.5) * (J @ J - dt * J @ M @ J / 6 - dt * Jd @ J @ J @ J / 6
                           + 2 * dt * (1j * J @ c(J, H) / 12 + 1j * c(H, J) @ J / 12))
    S3 = math.sqrt(6) * math.sqrt(dt) * J @ J @ J / 6
    S4 = (-math.sqrt(3) * math.sqrt(dt) * J @ M / 12 + math.sqrt(3) * math.sqrt(dt) * Jd @ J @ J / 12
          + math.sqrt(3) * 1j * math.sqrt(dt) * (-c(J, H)) / 6)
    return H0, {1: S1, 2: S2, 3: S3, 4: S4}


def _cross_terms_expanded(H, Ji, Jj):
    Ai, Aj = dagger(Ji), dagger(Jj)
    words = [
        (+1, [Ai, Ji, H, Aj, Jj]), (-1, [Ai, H, Ji, Aj, Jj]), (-1, [Ai, Aj, Ji, H, Jj]),
        (+1, [Ai, Aj, H, Ji, Jj]),
        (+1, [Aj, Ai, Jj, Ji, H]), (-1, [Aj, Ai, Jj, H, Ji]), (-1, [Aj, Ai, Ji, H, Jj]),
        (+1, [Aj, Ai, H, Ji, Jj]),
        (+1, [Aj, Jj, H, Ai, Ji]), (-1, [Aj, Jj, Ai, H, Ji]), (-1, [Aj, H, Ai, Jj, Ji]),
        (+1, [Aj, Ai, H, Jj, Ji]),
        (+1, [H, Ai, Aj, Ji, Jj]), (-1, [Ai, H, Aj, Ji, Jj]), (-1, [Aj, H, Ai, Ji, Jj]),
        (+1, [Aj, Ai, H, Ji, Jj]),
    ]
    out = np.zeros_like(H)
    for sign, word in words:
        out = out + sign * np.linalg.multi_dot(word)
    return out / 180


def _cross_terms_commutator(H, Ji, Jj):
    Ai, Aj = dagger(Ji), dagger(Jj)
    c = commutator
    return (Ai @ c(c(Ji, H), Aj) @ Jj + Aj @ Ai @ c(Jj, c(Ji, H)) + Aj @ c(Jj, c(H, Ai)) @ Ji
            + c(c(H, Ai), Aj) @ Ji @ Jj) / 180


TRANSCRIPTIONS = {
    "expanded": (_single_terms_order3_expanded, _cross_terms_expanded),
    "commutator": (_single_terms_order3_commutator, _cross_terms_commutator),
}


def dilation_terms(H: np.ndarray, jumps: Sequence[np.ndarray], order: int, dt: float,
                   transcription: str = "commutator") -> tuple:
    """(H_0, [{level: S_level} per jump]) on the system space."""
    if order not in ANCILLA_DIM:
        raise ValueError(f"dilation order must be 1, 2 or 3, got {order}")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if transcription not in TRANSCRIPTIONS:
        raise ValueError(f"unknown transcription {transcription!r}")
    single = {1: _single_terms_order1, 2: _single_terms_order2,
              3: TRANSCRIPTIONS[transcription][0]}[order]
    H = np.asarray(H, dtype=complex)
    H0 = H.copy()
    S = []
    for J in jumps:
        h0, s = single(H, np.asarray(J, dtype=complex), dt)
        H0 = H0 + h0
        S.append(s)
    if order == 3:
        cross = TRANSCRIPTIONS[transcription][1]
        for i in range(len(jumps)):
            for j in range(i + 1, len(jumps)):
                term = cross(H, jumps[i], jumps[j])
                if np.any(term):
                    H0 = H0 + dt**2 * term
    return H0, S


def assemble_dilated(H0: np.ndarray, S: Sequence[dict], order: int, dt: float, sys_dims) -> DilatedHamiltonian:
    d = ANCILLA_DIM[order]
    n = len(S)
    D = H0.shape[0]
    anc_dim = d**n
    op = sp.kron(sp.csr_matrix(H0), sp.identity(anc_dim, format="csr"), format="csr")
    for i, levels in enumerate(S):
        left = sp.identity(d**i, format="csr")
        right = sp.identity(d ** (n - i - 1), format="csr")
        for lev, Sop in levels.items():
            ladder = sp.csr_matrix(([1.0], ([lev], [0])), shape=(d, d))
            term = sp.kron(sp.csr_matrix(Sop), sp.kron(left, sp.kron(ladder, right)), format="csr")
            op = op + term + term.conj().T
    op = op.tocsr()
    if D * anc_dim <= DENSE_LIMIT:
        op = op.toarray()
    return DilatedHamiltonian(order, dt, op, tuple(sys_dims), d, n)


def dilated_hamiltonian(model: LatticeModel, order: int, dt: float,
                        transcription: str = "commutator") -> DilatedHamiltonian:
    if not model.markovian:
        raise ValueError("dilation needs a Markovian model")
    if order == 3:
        rep = validate_model(model, markovian_commuting=True)
        if not rep.ok:
            raise ValueError("order-3 dilation needs pairwise commuting jumps (with and without adjoint); "
                             f"defects {rep.commutator_defect:.3e}, {rep.commutator_dagger_defect:.3e}")
    H0, S = dilation_terms(model.hamiltonian(), model.jumps(), order, dt, transcription)
    return assemble_dilated(H0, S, order, dt, model.dims)


def dilation_channel(Hd: DilatedHamiltonian, max_dim: int | None = None) -> Channel:
    """One step exp(-i H_dia dt) with every ancilla in |0>, ancillas traced out."""
    if max_dim is not None and Hd.dim > max_dim:
        raise ValueError(f"dilated space dimension {Hd.dim} exceeds cap {max_dim}")
    D = int(np.prod(Hd.sys_dims))
    E = Hd.d_anc**Hd.n_anc
    inputs = np.zeros((D * E, D), dtype=complex)
    inputs[np.arange(D) * E, np.arange(D)] = 1.0
    if sp.issparse(Hd.op):
        cols = expm_multiply(-1j * Hd.dt * Hd.op, inputs)
    else:
        cols = expm_hermitian(Hd.op, Hd.dt) @ inputs
    ch = channel_from_purifications(cols.reshape(D, E, D), D)
    return Channel(ch.superop, Hd.sys_dims)


# ----------------------------------------------------------------------------
# scans


def remainder_scan(model: LatticeModel, order: int, dt_list: Sequence[float],
                   max_dim: int | None = None) -> dict:
    """distance(exp(L dt), E_dia(dt)) per dt and the fitted log-log slope."""
    dt_list = [float(x) for x in dt_list]
    if len(dt_list) < 4:
        raise ValueError("remainder scan needs >= 4 time steps")
    L = liouvillian(model)
    rows = []
    for dt in dt_list:
        err = channel_distance(exact_propagator(L, dt),
                               dilation_channel(dilated_hamiltonian(model, order, dt), max_dim))
        rows.append({"order": order, "dt": dt, "N": model.n_sites, "err": err,
                     "err_over_dt4": err / dt**4})
    slope, _, r2, keep = fit_slope(dt_list, [r["err"] for r in rows])
    return {"order": order, "slope": slope, "r2": r2, "expected_slope": order + 1,
            "points_used": int(np.sum(keep)), "rows": rows}


def g4_scaling_scan(model_family: Callable[[int], LatticeModel], N_list: Sequence[int], dt: float,
                    max_dim: int | None = None) -> dict:
    """Leading order-3 remainder r(N) = distance / dt^4 and its growth in N."""
    rows = []
    for N in N_list:
        model = model_family(N)
        err = channel_distance(exact_propagator(liouvillian(model), dt),
                               dilation_channel(dilated_hamiltonian(model, 3, dt), max_dim))
        rows.append({"order": 3, "dt": dt, "N": N, "err": err, "err_over_dt4": err / dt**4})
    Ns = np.array([r["N"] for r in rows], dtype=float)
    rN = np.array([r["err_over_dt4"] for r in rows])
    lin, lin_res = _polyfit_with_errors(Ns, rN, 1)
    quad, quad_cov = _polyfit_with_errors(Ns, rN, 2)
    per_site = rN / Ns
    return {"rows": rows, "linear_fit": {"intercept": lin[1], "slope": lin[0], "residual": lin_res},
            "quadratic_coef": quad[0], "quadratic_coef_stderr": quad_cov,
            "per_site_variation": float(per_site.max() / per_site.min() - 1.0),
            "per_site_nonincreasing": bool(np.all(np.diff(per_site) <= 0.25 * per_site[:-1]))}


def _polyfit_with_errors(x, y, deg):
    """Least-squares polynomial (highest power first) and, for the leading
    coefficient, its standard error (deg >= 2) or the max residual (deg 1)."""
    V = np.vander(x, deg + 1)
    coef, *_ = np.linalg.lstsq(V, y, rcond=None)
    resid = y - V @ coef
    if deg == 1:
        return coef, float(np.max(np.abs(resid)))
    dof = max(len(x) - (deg + 1), 1)
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(V.T @ V)
    return coef, float(math.sqrt(cov[0, 0]))
