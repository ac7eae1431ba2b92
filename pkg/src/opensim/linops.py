"""Dense operator algebra and quantum channels.

Operators are plain complex ``numpy`` arrays; the tensor-factor layout is
passed alongside as a ``dims`` sequence wherever it matters.  Density
matrices are vectorized by column stacking, so that

    vec(A @ rho @ B) = kron(B.T, A) @ vec(rho).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np

HERMITIAN_TOL = 1e-12
UNITARY_TOL = 1e-10

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
# lowering operator |1> -> |0>; |1> is the excited level throughout
SM = np.array([[0, 1], [0, 0]], dtype=complex)
SP = SM.conj().T


def kron(*ops: np.ndarray) -> np.ndarray:
    """Kronecker product of any number of operators (left factor first)."""
    return reduce(np.kron, ops, np.ones((1, 1), dtype=complex))


def embed(op: np.ndarray, first: int, dims: Sequence[int]) -> np.ndarray:
    """Place ``op`` acting on consecutive factors starting at ``first``."""
    span = 1
    k = first
    while span < op.shape[0]:
        span *= dims[k]
        k += 1
    if span != op.shape[0]:
        raise ValueError("operator does not cover a whole number of factors")
    left = int(np.prod(dims[:first]))
    right = int(np.prod(dims[k:]))
    return kron(np.eye(left), op, np.eye(right))


def dagger(A: np.ndarray) -> np.ndarray:
    return A.conj().T


def hermiticity_defect(A: np.ndarray) -> float:
    return float(np.max(np.abs(A - dagger(A)))) if A.size else 0.0


def commutator(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return A @ B - B @ A


def spectral_norm(A: np.ndarray) -> float:
    return float(np.linalg.norm(A, 2))


def check_hermitian(H: np.ndarray, what: str = "operator") -> np.ndarray:
    """Return the Hermitian part of ``H``, rejecting visibly non-Hermitian input.

    The tolerance is relative to the largest entry so that large generators
    (for example dilations at small time steps) are judged fairly.
    """
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"{what} must be a square matrix, got shape {H.shape}")
    defect = hermiticity_defect(H)
    scale = max(1.0, float(np.max(np.abs(H)))) if H.size else 1.0
    if defect > HERMITIAN_TOL * scale:
        raise ValueError(f"{what} is not Hermitian: max|A - A^dag| = {defect:.3e}")
    return 0.5 * (H + dagger(H))


def expm_hermitian(H: np.ndarray, t: float) -> np.ndarray:
    """Return exp(-i H t) by Hermitian eigendecomposition."""
    H = check_hermitian(H, "generator")
    w, V = np.linalg.eigh(H)
    return (V * np.exp(-1j * t * w)) @ dagger(V)


def partial_trace(A: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Trace out every factor of ``A`` not listed in ``keep``.

    Kept factors stay in their original order.
    """
    dims = [int(d) for d in dims]
    n = len(dims)
    keep = sorted(set(int(k) for k in keep))
    for k in keep:
        if not 0 <= k < n:
            raise IndexError(f"factor index {k} out of range for {n} factors")
    D = int(np.prod(dims))
    if A.shape != (D, D):
        raise ValueError(f"operator shape {A.shape} does not match dims {dims}")
    T = A.reshape(dims + dims)
    traced = [k for k in range(n) if k not in keep]
    # trace from the highest index down so remaining axis numbers stay valid
    for m, k in enumerate(sorted(traced, reverse=True)):
        cur = n - m
        T = np.trace(T, axis1=k, axis2=k + cur)
    dk = int(np.prod([dims[k] for k in keep])) if keep else 1
    return T.reshape(dk, dk)


def trace_norm(A: np.ndarray) -> float:
    """Sum of singular values."""
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("trace norm needs a square matrix")
    if hermiticity_defect(A) < 1e-13 * max(1.0, float(np.max(np.abs(A)))):
        return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (A + dagger(A))))))
    return float(np.sum(np.linalg.svd(A, compute_uv=False)))


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v: np.ndarray) -> np.ndarray:
    D = int(round(np.sqrt(v.size)))
    return np.asarray(v).reshape(D, D, order="F")


def superop_from_kraus(kraus: Sequence[np.ndarray]) -> np.ndarray:
    return sum(np.kron(K.conj(), K) for K in kraus)


def superop_from_map(fn, D: int) -> np.ndarray:
    """Superoperator of an arbitrary linear map on D x D matrices."""
    S = np.zeros((D * D, D * D), dtype=complex)
    for j in range(D):
        for i in range(D):
            E = np.zeros((D, D), dtype=complex)
            E[i, j] = 1.0
            S[:, j * D + i] = vec(fn(E))
    return S


@dataclass(frozen=True)
class Channel:
    """A linear map on density matrices, stored as a column-stacking superoperator.

    ``estimate`` marks Monte-Carlo averages, which carry a per-entry
    ``stderr`` and are exempt from the positivity check.
    """

    superop: np.ndarray
    dims: tuple = field(default=())
    estimate: bool = False
    stderr: np.ndarray | None = None

    def __post_init__(self):
        S = np.asarray(self.superop, dtype=complex)
        D2 = S.shape[0]
        D = int(round(np.sqrt(D2)))
        if S.shape != (D2, D2) or D * D != D2:
            raise ValueError(f"superoperator shape {S.shape} is not D^2 x D^2")
        dims = tuple(self.dims) if self.dims else (D,)
        if int(np.prod(dims)) != D:
            raise ValueError(f"dims {dims} do not multiply to {D}")
        object.__setattr__(self, "superop", S)
        object.__setattr__(self, "dims", dims)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    @classmethod
    def identity(cls, dims: Sequence[int]) -> "Channel":
        D = int(np.prod(dims))
        return cls(np.eye(D * D, dtype=complex), tuple(dims))

    @classmethod
    def from_kraus(cls, kraus: Sequence[np.ndarray], dims: Sequence[int] | None = None) -> "Channel":
        D = kraus[0].shape[0]
        return cls(superop_from_kraus(kraus), tuple(dims) if dims else (D,))

    @classmethod
    def from_unitary(cls, U: np.ndarray, dims: Sequence[int] | None = None) -> "Channel":
        return cls.from_kraus([U], dims)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return unvec(self.superop @ vec(rho))

    def compose(self, first: "Channel") -> "Channel":
        """Return ``self o first`` (``first`` acts first)."""
        if first.dims != self.dims:
            raise ValueError("dimension mismatch in channel composition")
        return Channel(self.superop @ first.superop, self.dims)

    def choi(self) -> np.ndarray:
        """Choi matrix sum_ij |i><j| (x) E(|i><j|), input factor first."""
        D = self.dim
        S4 = self.superop.reshape(D, D, D, D)  # [b, a, j, i]
        return S4.transpose(3, 1, 2, 0).reshape(D * D, D * D)

    def trace_defect(self) -> float:
        """max over basis inputs of |Tr E(|i><j|) - delta_ij|."""
        D = self.dim
        trace_row = np.eye(D).reshape(-1, order="F")
        return float(np.max(np.abs(trace_row @ self.superop - trace_row)))

    def min_choi_eigenvalue(self) -> float:
        C = self.choi()
        return float(np.min(np.linalg.eigvalsh(0.5 * (C + dagger(C)))))


def channel_from_dilation(
    U: np.ndarray,
    sys_dims: Sequence[int],
    env_dims: Sequence[int],
    env_init: np.ndarray,
) -> Channel:
    """Channel rho -> Tr_env(U (rho (x) env_init) U^dag), system factors first."""
    Ds = int(np.prod(sys_dims))
    De = int(np.prod(env_dims))
    if U.shape != (Ds * De, Ds * De):
        raise ValueError(f"U shape {U.shape} does not match sys {Ds} x env {De}")
    tr = np.trace(env_init)
    if abs(tr - 1) > 1e-10:
        raise ValueError(f"environment state has trace {tr}, expected 1")
    p, vecs = np.linalg.eigh(0.5 * (env_init + dagger(env_init)))
    U4 = U.reshape(Ds, De, Ds, De)
    kraus = []
    for pk, ek in zip(p, vecs.T):
        if pk <= 1e-15:
            continue
        # K_{m,k} = sqrt(p_k) <m|_env U |e_k>_env
        block = np.sqrt(pk) * np.einsum("ambn,n->mab", U4, ek)
        kraus.extend(block)
    return Channel.from_kraus(kraus, tuple(sys_dims))


def channel_from_purifications(columns: np.ndarray, D: int) -> Channel:
    """Channel from evolved purifications ``psi_k = U |k>|env_0>``.

    ``columns`` has shape (D, env_size, D): system index, environment index,
    input basis label k.  Then E(|k><l|) = Tr_env(psi_k psi_l^dag).
    """
    # E(|k><l|)[a, b] = sum_e psi[a, e, k] conj(psi[b, e, l])
    K = columns.shape[2]
    M = np.ascontiguousarray(columns.transpose(0, 2, 1)).reshape(D * K, -1)
    G = (M @ M.conj().T).reshape(D, K, D, K)  # [a, k, b, l]
    # superop row b*D + a, column l*D + k
    S = G.transpose(2, 0, 3, 1).reshape(D * D, K * K)
    return Channel(S, (D,))


def channel_distance(E1: Channel, E2: Channel) -> float:
    """Trace distance of the unit-trace Choi matrices of two channels.

    A lower bound on the diamond-norm distance, used as the single error
    metric for every scaling fit.
    """
    if E1.dim != E2.dim:
        raise ValueError(f"channel dims differ: {E1.dims} vs {E2.dims}")
    D = E1.dim
    return trace_norm((E1.choi() - E2.choi()) / D)


def depolarizing_channel(D: int, p: float) -> Channel:
    """rho -> (1 - p) rho + p Tr(rho) I / D."""
    return Channel(superop_from_map(lambda r: (1 - p) * r + p * np.trace(r) * np.eye(D) / D, D), (D,))


def dephasing_channel(p: float) -> Channel:
    """Qubit map scaling off-diagonal entries by 1 - p."""
    return Channel(superop_from_map(lambda r: r * np.array([[1, 1 - p], [1 - p, 1]]), 2), (2,))


def product_state(single: Sequence[np.ndarray]) -> np.ndarray:
    return reduce(np.kron, single)


def random_qubit_state(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=2) + 1j * rng.normal(size=2)
    return v / np.linalg.norm(v)


def random_density(D: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    G = rng.normal(size=(D, rank or D)) + 1j * rng.normal(size=(D, rank or D))
    rho = G @ dagger(G)
    return rho / np.trace(rho)


def random_unitary(D: int, rng: np.random.Generator) -> np.ndarray:
    Z = (rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D))) / np.sqrt(2)
    Q, R = np.linalg.qr(Z)
    return Q * (np.diag(R) / np.abs(np.diag(R)))
