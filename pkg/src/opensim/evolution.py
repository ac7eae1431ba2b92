"""Staged evolution of a qubit chain coupled to discretized, truncated bath modes.

The global Hilbert space is the chain followed by every bath mode that
couples during [0, t_final] (bond 0's modes first).  Each Trotter stage
evolves one group of non-overlapping bonds; a bond stage only involves the
bond's two sites and the modes whose coefficients are nonzero during the
stage.

Two backends share this interface:

``TensorBackend``  the full tensor-product space, with stage propagators
                   built densely on the local factors and contracted in.
``SparseBackend``  the subspace reachable from the initial states under the
                   model's terms (exact; small for excitation-conserving
                   models), propagated with scipy ``expm_multiply``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .envdisc import DiscretizedEnvironment, annihilation, coefficients
from .linops import I2, channel_from_purifications, dagger, expm_hermitian, kron
from .model import LatticeModel


class DimensionCapExceeded(RuntimeError):
    pass


def midpoints(t1: float, t2: float, substeps: int) -> tuple:
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    h = (t2 - t1) / substeps
    return h, [t1 + (k + 0.5) * h for k in range(substeps)]


def bond_local_terms(model: LatticeModel) -> tuple:
    """Per-bond (H_b, J_b) expressed on the bond's own sites."""
    N = model.n_sites
    nb = model.n_bonds
    width = 2 if N >= 2 else 1
    H = [np.zeros((2**width, 2**width), dtype=complex) for _ in range(nb)]
    J = [np.zeros((2**width, 2**width), dtype=complex) for _ in range(nb)]

    def place(b, s, op):
        if width == 1:
            return op
        if op.shape[0] == 4:
            return op
        return np.kron(op, I2) if s == b else np.kron(I2, op)

    for s, op in model.h_terms:
        b = model.bond_of(s)
        H[b] = H[b] + place(b, s, op)
    if not model.markovian:
        for b, (s, op) in enumerate(model.j_terms):
            fits = (op.shape[0] == 4 and s == b) or (op.shape[0] == 2 and s in (b, b + 1))
            if width == 2 and not fits:
                raise ValueError(f"jump {b} at site {s} does not sit on bond {b}")
            J[b] = place(b, s, op)
    return H, J


def bond_sites(model: LatticeModel, b: int) -> tuple:
    return (b, b + 1) if model.n_sites >= 2 else (0,)


def bond_groups(model: LatticeModel) -> tuple:
    """Bonds 0, 2, 4, ... and bonds 1, 3, 5, ...; each group commutes internally."""
    nb = model.n_bonds
    return tuple(range(0, nb, 2)), tuple(range(1, nb, 2))


@dataclass
class Layout:
    n_sites: int
    modes: list        # per bond, list of (j, n)
    d: int

    @property
    def dims(self) -> tuple:
        return (2,) * self.n_sites + (self.d,) * sum(len(m) for m in self.modes)

    def axis(self, bond: int, label) -> int:
        off = self.n_sites + sum(len(m) for m in self.modes[:bond])
        return off + self.modes[bond].index(label)

    @property
    def env_size(self) -> int:
        return self.d ** sum(len(m) for m in self.modes)


class _Coefficients:
    """Memoized C_j^n(tau) per bond coupling."""

    def __init__(self, model: LatticeModel, env: DiscretizedEnvironment | None):
        self.model, self.env = model, env
        self._cache = {}

    def __call__(self, b: int, tau: float) -> dict:
        if self.env is None:
            return {}
        v = self.model.coupling[b]
        key = (id(v), round(tau, 15))
        out = self._cache.get(key)
        if out is None:
            out = {k: c for k, c in coefficients(self.env, v, tau).items() if c != 0}
            self._cache[key] = out
        return out


class _BackendBase:
    def __init__(self, model: LatticeModel, env: DiscretizedEnvironment | None, t_final: float,
                 max_dim: int):
        self.model = model
        self.env = env if (env is not None and not model.markovian) else None
        self.H_loc, self.J_loc = bond_local_terms(model)
        modes = [self.env.modes() if self.env else [] for _ in range(model.n_bonds)]
        if self.env is not None:
            # modes must cover the whole evolution window
            env_full = DiscretizedEnvironment(self.env.eta, self.env.j_max, self.env.d, self.env.r,
                                              max(t_final, self.env.t), self.env.quad_tol)
            modes = [env_full.modes() for _ in range(model.n_bonds)]
        self.layout = Layout(model.n_sites, modes, self.env.d if self.env else 1)
        self.coeff = _Coefficients(model, self.env)
        self.max_dim = max_dim
        self.t_final = t_final
        self.D = model.dim

    def stage_coefficients(self, b: int, taus) -> list:
        return [self.coeff(b, tau) for tau in taus]


# ----------------------------------------------------------------------------
# tensor backend


class TensorBackend(_BackendBase):
    """Full tensor-product state with local dense stage propagators."""

    def __init__(self, model, env, t_final, max_dim=4096):
        super().__init__(model, env, t_final, max_dim)
        self.dims = self.layout.dims
        self.dim = int(np.prod(self.dims))
        if self.dim > max_dim:
            raise DimensionCapExceeded(
                f"tensor space dimension {self.dim} = {self.D} system x {self.layout.env_size} bath "
                f"exceeds cap {max_dim}")
        self._ops = {}

    # local operators on (bond sites) + active modes
    def _local_ops(self, b: int, active: tuple):
        key = (b, active)
        ops = self._ops.get(key)
        if ops is None:
            d = self.layout.d
            n_act = len(active)
            Ienv = np.eye(d**n_act)
            H0 = np.kron(self.H_loc[b], Ienv)
            X = []
            a = annihilation(d) if n_act else None
            for k in range(n_act):
                factors = [np.eye(d)] * n_act
                factors[k] = a
                X.append(np.kron(dagger(self.J_loc[b]), kron(*factors)))
            ops = (H0, X)
            self._ops[key] = ops
        return ops

    def bond_propagator(self, b: int, t1: float, t2: float, substeps: int):
        """Returns (axes, U) for the bond stage T exp(-i int_{t1}^{t2} H_b)."""
        h, taus = midpoints(t1, t2, substeps)
        cs = self.stage_coefficients(b, taus)
        active = tuple(sorted(set().union(*cs))) if cs else ()
        H0, X = self._local_ops(b, active)
        U = np.eye(H0.shape[0], dtype=complex)
        for c in cs:
            H = H0.copy()
            for k, lab in enumerate(active):
                ck = c.get(lab, 0.0)
                if ck:
                    H += ck * X[k] + np.conj(ck) * dagger(X[k])
            U = expm_hermitian(H, h) @ U
        axes = list(bond_sites(self.model, b)) + [self.layout.axis(b, lab) for lab in active]
        return axes, U

    def initial_pure(self, sys_states: np.ndarray) -> np.ndarray:
        """sys_states: (D, batch) -> tensor (*dims, batch) with bath in vacuum."""
        batch = sys_states.shape[1]
        env = np.zeros(self.layout.env_size, dtype=complex)
        env[0] = 1.0
        psi = np.einsum("sb,e->seb", sys_states, env)
        return psi.reshape(self.dims + (batch,))

    def initial_mixed(self, rhos: np.ndarray) -> np.ndarray:
        """rhos: (batch, D, D) -> tensor (*dims, *dims, batch)."""
        E = self.layout.env_size
        vac = np.zeros((E, E), dtype=complex)
        vac[0, 0] = 1.0
        R = np.einsum("bij,ef->iejfb", rhos, vac)
        return R.reshape(self.dims + self.dims + (rhos.shape[0],))

    @staticmethod
    def _apply(U, state, axes):
        k = len(axes)
        Ut = U.reshape([state.shape[a] for a in axes] * 2)
        out = np.tensordot(Ut, state, axes=(list(range(k, 2 * k)), axes))
        return np.moveaxis(out, list(range(k)), axes)

    def apply_pure(self, state, axes, U):
        return self._apply(U, state, axes)

    def apply_mixed(self, state, axes, U):
        n = len(self.dims)
        state = self._apply(U, state, axes)
        return self._apply(U.conj(), state, [a + n for a in axes])

    def depolarize(self, state, sites, gamma):
        """(1 - gamma) rho + gamma (I/2^k) (x) Tr_sites rho on a mixed tensor."""
        if gamma == 0:
            return state
        n = len(self.dims)
        k = len(sites)
        src = list(sites) + [s + n for s in sites]
        moved = np.moveaxis(state, src, list(range(2 * k)))
        shape = moved.shape
        M = moved.reshape((2**k, 2**k) + shape[2 * k:])
        reduced = np.trace(M, axis1=0, axis2=1)
        mixed = np.multiply.outer(np.eye(2**k) / 2**k, reduced).reshape(shape)
        return (1 - gamma) * state + gamma * np.moveaxis(mixed, list(range(2 * k)), src)

    def system_channel(self, psi) -> "Channel":
        D = self.D
        cols = psi.reshape(D, self.layout.env_size, -1)
        return channel_from_purifications(cols, D)

    def system_states_pure(self, psi) -> np.ndarray:
        cols = psi.reshape(self.D, self.layout.env_size, -1)
        return np.einsum("aeb,ceb->bac", cols, cols.conj())

    def system_states_mixed(self, R) -> np.ndarray:
        D, E = self.D, self.layout.env_size
        M = R.reshape(D, E, D, E, -1)
        return np.einsum("aebeq->qab", M)


# ----------------------------------------------------------------------------
# sparse reachable-subspace backend


class _Combination:
    """Fixed sparsity union of weighted sparse pieces, reassembled cheaply."""

    def __init__(self, pieces: list, dim: int):
        mats = [p.tocoo() for p in pieces]
        if mats:
            rows = np.concatenate([m.row for m in mats])
            cols = np.concatenate([m.col for m in mats])
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
        keys = rows.astype(np.int64) * dim + cols
        uniq, inv = np.unique(keys, return_inverse=True)
        self.dim = dim
        self.rows, self.cols = uniq // dim, uniq % dim
        self.maps, self.vals = [], []
        start = 0
        for m in mats:
            self.maps.append(inv[start:start + m.nnz])
            self.vals.append(m.data)
            start += m.nnz
        self.nnz = uniq.size

    def assemble(self, weights) -> sp.csr_matrix:
        data = np.zeros(self.nnz, dtype=complex)
        for w, idx, val in zip(weights, self.maps, self.vals):
            if w != 0:
                np.add.at(data, idx, w * val)
        return sp.csr_matrix((data, (self.rows, self.cols)), shape=(self.dim, self.dim))


class SparseBackend(_BackendBase):
    """Evolution restricted to the span reachable from the initial states."""

    def __init__(self, model, env, t_final, max_dim=4096, inputs=None):
        super().__init__(model, env, t_final, max_dim)
        self.fdims = np.array(self.layout.dims, dtype=np.int64)
        if np.sum(np.log(self.fdims.astype(float))) > 62 * math.log(2):
            raise DimensionCapExceeded("tensor index space too large to enumerate")
        self.strides = np.array([int(np.prod(self.fdims[k + 1:])) for k in range(self.fdims.size)],
                                dtype=np.int64)
        self.env_size = self.layout.env_size
        starts = np.arange(self.D, dtype=np.int64) * self.env_size if inputs is None else \
            np.asarray(inputs, dtype=np.int64) * self.env_size
        self._terms = self._build_terms()
        self.basis = self._reachable(starts)
        self.dim = int(self.basis.size)
        self._pieces_cache = {}
        self.sparse_terms = {key: self._to_sparse(f, L) for key, (f, L) in self._terms.items()}
        self.input_positions = np.searchsorted(self.basis, np.arange(self.D) * self.env_size)

    def _build_terms(self) -> dict:
        terms = {}
        d = self.layout.d
        a = annihilation(d) if self.env else None
        for b in range(self.model.n_bonds):
            sites = bond_sites(self.model, b)
            terms[("H", b)] = (tuple(sites), self.H_loc[b])
            for lab in self.layout.modes[b]:
                ax = self.layout.axis(b, lab)
                X = np.kron(dagger(self.J_loc[b]), a)
                terms[("X", b, lab)] = (tuple(sites) + (ax,), X)
        return terms

    def _transitions(self, idx, factors, L):
        """Yield (src_mask_positions, dst_flat, value) for every nonzero of L."""
        fd = self.fdims[list(factors)]
        st = self.strides[list(factors)]
        digits = [(idx // st[k]) % fd[k] for k in range(len(factors))]
        lstr = [int(np.prod(fd[k + 1:])) for k in range(len(factors))]
        local = sum(digits[k] * lstr[k] for k in range(len(factors)))
        base = idx - sum(digits[k] * st[k] for k in range(len(factors)))
        rr, cc = np.nonzero(L)
        for r, c in zip(rr, cc):
            mask = local == c
            if not mask.any():
                continue
            rdig = [(r // lstr[k]) % fd[k] for k in range(len(factors))]
            shift = sum(int(rdig[k]) * int(st[k]) for k in range(len(factors)))
            yield np.nonzero(mask)[0], base[mask] + shift, L[r, c]

    def _reachable(self, starts) -> np.ndarray:
        visited = np.unique(starts)
        frontier = visited
        ops = []
        for f, L in self._terms.values():
            ops.append((f, L))
            ops.append((f, dagger(L)))
        while frontier.size:
            found = []
            for f, L in ops:
                for _, dst, _ in self._transitions(frontier, f, L):
                    found.append(dst)
            if not found:
                break
            new = np.setdiff1d(np.unique(np.concatenate(found)), visited, assume_unique=True)
            visited = np.union1d(visited, new)
            frontier = new
            if visited.size > self.max_dim:
                raise DimensionCapExceeded(
                    f"reachable subspace exceeds cap {self.max_dim} (>= {visited.size} states)")
        return visited

    def _to_sparse(self, factors, L) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        for src, dst, val in self._transitions(self.basis, factors, L):
            pos = np.searchsorted(self.basis, dst)
            rows.append(pos)
            cols.append(src)
            vals.append(np.full(src.size, val, dtype=complex))
        if rows:
            rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.dim, self.dim))

    def _group_combination(self, bonds: tuple):
        comb = self._pieces_cache.get(bonds)
        if comb is None:
            pieces, labels = [], []
            for b in bonds:
                pieces.append(self.sparse_terms[("H", b)])
                labels.append(("H", b))
                for lab in self.layout.modes[b]:
                    X = self.sparse_terms[("X", b, lab)]
                    pieces += [X, X.conj().T.tocsr()]
                    labels += [("X", b, lab), ("Xd", b, lab)]
            comb = (_Combination(pieces, self.dim), labels)
            self._pieces_cache[bonds] = comb
        return comb

    def group_generator(self, bonds: tuple, tau: float) -> sp.csr_matrix:
        comb, labels = self._group_combination(bonds)
        cs = {b: self.coeff(b, tau) for b in bonds}
        w = []
        for lab in labels:
            if lab[0] == "H":
                w.append(1.0)
            else:
                c = cs[lab[1]].get(lab[2], 0.0)
                w.append(c if lab[0] == "X" else np.conj(c))
        return comb.assemble(w)

    def initial_pure(self, sys_states: np.ndarray) -> np.ndarray:
        psi = np.zeros((self.dim, sys_states.shape[1]), dtype=complex)
        psi[self.input_positions] = sys_states
        return psi

    def evolve_group(self, psi, bonds, t1, t2, substeps):
        h, taus = midpoints(t1, t2, substeps)
        for tau in taus:
            H = self.group_generator(bonds, tau)
            psi = expm_multiply(-1j * h * H, psi)
        return psi

    def _split(self):
        sys_idx = self.basis // self.env_size
        env_flat = self.basis % self.env_size
        env_ids, env_pos = np.unique(env_flat, return_inverse=True)
        return sys_idx, env_pos, env_ids.size

    def system_channel(self, psi):
        sys_idx, env_pos, n_env = self._split()
        cols = np.zeros((self.D, n_env, psi.shape[1]), dtype=complex)
        cols[sys_idx, env_pos] = psi
        return channel_from_purifications(cols, self.D)

    def system_states_pure(self, psi):
        sys_idx, env_pos, n_env = self._split()
        cols = np.zeros((self.D, n_env, psi.shape[1]), dtype=complex)
        cols[sys_idx, env_pos] = psi
        return np.einsum("aeb,ceb->bac", cols, cols.conj())

    def occupation_tail(self, psi_col, bond: int, label, d_cut: int) -> float:
        ax = self.layout.axis(bond, label)
        level = (self.basis // self.strides[ax]) % self.fdims[ax]
        return float(np.linalg.norm(psi_col[level >= d_cut]))
