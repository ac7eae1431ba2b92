"""Product formulas and staged odd/even Trotterization of the open chain."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .envdisc import DiscretizedEnvironment, fit_slope
from .evolution import (DimensionCapExceeded, SparseBackend, TensorBackend, bond_groups,
                        bond_sites, midpoints)
from .linops import Channel, channel_distance, expm_hermitian, random_qubit_state
from .model import LatticeModel

DEFAULT_MAX_DIM = 4096


@dataclass(frozen=True)
class ProductFormula:
    """Stage i applies the A group for eps[i] * dt, then the B group for mu[i] * dt."""

    order: int
    eps: tuple
    mu: tuple

    def __post_init__(self):
        if len(self.eps) != len(self.mu) or not self.eps:
            raise ValueError("eps and mu must be non-empty and of equal length")
        if abs(sum(self.eps) - 1) > 1e-14 or abs(sum(self.mu) - 1) > 1e-14:
            raise ValueError("stage weights must each sum to 1")

    @property
    def stages(self) -> int:
        return len(self.eps)

    @property
    def cum_e(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.eps)])

    @property
    def cum_f(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.mu)])


def _merge(factors: list) -> list:
    out = []
    for g, w in factors:
        if out and out[-1][0] == g:
            out[-1] = (g, out[-1][1] + w)
        else:
            out.append((g, w))
    return out


def _strang_factors(scale: float) -> list:
    return [("A", scale / 2), ("B", scale), ("A", scale / 2)]


def _suzuki_factors(P: int, scale: float) -> list:
    if P == 2:
        return _strang_factors(scale)
    k = P // 2
    u = 1.0 / (4.0 - 4.0 ** (1.0 / (2 * k - 1)))
    inner = lambda s: _suzuki_factors(P - 2, s)  # noqa: E731
    return inner(u * scale) * 2 + inner((1 - 4 * u) * scale) + inner(u * scale) * 2


def suzuki_formula(P: int) -> ProductFormula:
    """Lie (P = 1) or the Suzuki fractal S_P, adjacent same-group factors merged."""
    if P == 1:
        return ProductFormula(1, (1.0,), (1.0,))
    if P not in (2, 4, 6):
        raise ValueError(f"unsupported product-formula order {P}; choose 1, 2, 4 or 6")
    factors = _merge(_suzuki_factors(P, 1.0))
    eps, mu = [], []
    for k in range(0, len(factors), 2):
        eps.append(factors[k][1])
        mu.append(factors[k + 1][1] if k + 1 < len(factors) else 0.0)
    # absorb round-off so each weight set sums to 1 exactly
    eps[-1] += 1.0 - math.fsum(eps)
    mu[-2 if mu[-1] == 0.0 else -1] += 1.0 - math.fsum(mu)
    return ProductFormula(P, tuple(eps), tuple(mu))


def stage_schedule(formula: ProductFormula, t: float, T: int) -> list:
    """Ordered (group, t_from, t_to) stage intervals; zero-length stages dropped."""
    if T < 1:
        raise ValueError("T must be >= 1")
    dt = t / T
    e, f = formula.cum_e, formula.cum_f
    out = []
    for j in range(T):
        for i in range(1, formula.stages + 1):
            if e[i] != e[i - 1]:
                out.append((0, (e[i - 1] + j) * dt, (e[i] + j) * dt))
            if f[i] != f[i - 1]:
                out.append((1, (f[i - 1] + j) * dt, (f[i] + j) * dt))
    return out


def evolve_piecewise(H_of_t: Callable[[float], np.ndarray], t1: float, t2: float,
                     substeps: int) -> np.ndarray:
    """Midpoint-rule approximation of T exp(-i int_{t1}^{t2} H); t2 < t1 runs backward."""
    h, taus = midpoints(t1, t2, substeps)
    U = None
    for tau in taus:
        step = expm_hermitian(H_of_t(tau), h)
        U = step if U is None else step @ U
    return U


# ----------------------------------------------------------------------------
# channel construction


def make_backend(model: LatticeModel, env: DiscretizedEnvironment | None, t: float,
                 backend: str = "auto", max_dim: int = DEFAULT_MAX_DIM):
    """Tensor backend when the full space fits under the cap, else the reachable subspace."""
    if backend == "tensor":
        return TensorBackend(model, env, t, max_dim)
    if backend == "sparse":
        return SparseBackend(model, env, t, max_dim)
    if backend != "auto":
        raise ValueError(f"unknown backend {backend!r}")
    try:
        return TensorBackend(model, env, t, max_dim)
    except DimensionCapExceeded as full_err:
        try:
            return SparseBackend(model, env, t, max_dim)
        except DimensionCapExceeded as sparse_err:
            raise DimensionCapExceeded(f"{full_err}; {sparse_err}") from None


def _run_pure(be, psi, schedule, substeps, observer=None):
    tensor = isinstance(be, TensorBackend)
    groups = bond_groups(be.model)
    for k, (g, t1, t2) in enumerate(schedule):
        bonds = groups[g]
        if not bonds:
            continue
        if tensor:
            for b in bonds:
                axes, U = be.bond_propagator(b, t1, t2, substeps)
                psi = be.apply_pure(psi, axes, U)
        else:
            psi = be.evolve_group(psi, bonds, t1, t2, substeps)
        if observer is not None:
            observer(k, psi)
    return psi


def _run_mixed(be, R, schedule, substeps, gamma):
    groups = bond_groups(be.model)
    for g, t1, t2 in schedule:
        for b in groups[g]:
            axes, U = be.bond_propagator(b, t1, t2, substeps)
            R = be.apply_mixed(R, axes, U)
            if gamma:
                R = be.depolarize(R, list(bond_sites(be.model, b)), gamma)
    return R


def _check_gamma(gamma: float):
    if not 0 <= gamma < 1:
        raise ValueError(f"depolarizing rate must lie in [0, 1), got {gamma}")


def trotter_channel(model: LatticeModel, env: DiscretizedEnvironment | None,
                    formula: ProductFormula, t: float, T: int, substeps: int = 1,
                    backend: str = "auto", max_dim: int = DEFAULT_MAX_DIM,
                    gamma: float = 0.0) -> Channel:
    """System channel of the staged product formula, bath modes starting in vacuum.

    ``gamma > 0`` follows every bond stage with two-qubit depolarizing noise on
    that bond (tensor backend, density-matrix propagation).
    """
    _check_gamma(gamma)
    schedule = stage_schedule(formula, t, T)
    D = model.dim
    if gamma:
        be = TensorBackend(model, env, t, max_dim)
        basis = np.zeros((D * D, D, D), dtype=complex)
        for k in range(D):
            for l in range(D):
                basis[l * D + k, k, l] = 1.0
        out = be.system_states_mixed(_run_mixed(be, be.initial_mixed(basis), schedule, substeps, gamma))
        S = np.stack([o.reshape(-1, order="F") for o in out], axis=1)
        return Channel(S, model.dims)
    be = make_backend(model, env, t, backend, max_dim)
    psi = _run_pure(be, be.initial_pure(np.eye(D, dtype=complex)), schedule, substeps)
    ch = be.system_channel(psi)
    return Channel(ch.superop, model.dims)


def trotter_states(model: LatticeModel, env: DiscretizedEnvironment | None,
                   formula: ProductFormula, t: float, T: int, inputs: np.ndarray,
                   substeps: int = 1, max_dim: int = DEFAULT_MAX_DIM,
                   gamma: float = 0.0) -> np.ndarray:
    """Final reduced system states for pure inputs (columns of ``inputs``)."""
    _check_gamma(gamma)
    schedule = stage_schedule(formula, t, T)
    be = TensorBackend(model, env, t, max_dim)
    if gamma:
        rhos = np.einsum("ab,cb->bac", inputs, inputs.conj())
        R = _run_mixed(be, be.initial_mixed(rhos), schedule, substeps, gamma)
        return be.system_states_mixed(R)
    psi = _run_pure(be, be.initial_pure(inputs), schedule, substeps)
    return be.system_states_pure(psi)


def inject_depolarizing(channel_builder: Callable[..., Channel], gamma: float) -> Channel:
    """Call ``channel_builder(gamma=...)`` with per-stage, per-bond depolarizing noise."""
    _check_gamma(gamma)
    return channel_builder(gamma=gamma)


def closed_reference(model: LatticeModel, t: float) -> Channel:
    return Channel.from_unitary(expm_hermitian(model.hamiltonian(), t), model.dims)


# ----------------------------------------------------------------------------
# scans


def random_product_inputs(n_sites: int, count: int, seed: int) -> np.ndarray:
    """Random product states; site s of state k depends only on (seed, k, s),
    so chains of different length share their common sites."""
    cols = []
    for k in range(count):
        v = np.ones(1, dtype=complex)
        for s in range(n_sites):
            v = np.kron(v, random_qubit_state(np.random.default_rng([seed, k, s])))
        cols.append(v)
    return np.stack(cols, axis=1)


def local_observable_error(states_a: np.ndarray, states_b: np.ndarray, site: int, n_sites: int,
                           op: np.ndarray) -> float:
    """max over the batch of |Tr(O_site (rho_a - rho_b))|."""
    from .linops import embed

    O = embed(op, site, (2,) * n_sites)
    diff = np.einsum("ij,bji->b", O, states_a - states_b)
    return float(np.max(np.abs(diff)))


def max_state_distance(states_a: np.ndarray, states_b: np.ndarray) -> float:
    """max over the batch of the trace distance between paired states."""
    from .linops import trace_norm

    return max(0.5 * trace_norm(a - b) for a, b in zip(states_a, states_b))


def order_scan(model: LatticeModel, env: DiscretizedEnvironment | None, formula: ProductFormula,
               t: float, T_list: Sequence[int], observable="full_channel", substeps: int = 1,
               reference: str = "auto", ref_factor: int = 16, max_dim: int = DEFAULT_MAX_DIM,
               backend: str = "auto", n_states: int = 20, seed: int = 0,
               check_substeps: bool = False) -> dict:
    """Per-T error against a reference plus the fitted log-log slope in dt.

    ``reference="expm"`` uses the exact closed-system propagator (models
    without a bath); otherwise a second-order run at ``ref_factor`` times the
    finest T with the same substeps.  ``observable`` is ``"full_channel"`` or a
    pair (site, single-site operator), the latter evaluated as the max over
    ``n_states`` random product inputs.
    """
    T_list = [int(T) for T in T_list]
    if len(T_list) < 3:
        raise ValueError("order scan needs >= 3 points in T_list")
    ratios = [b / a for a, b in zip(T_list, T_list[1:])]
    if any(r <= 1 for r in ratios) or max(ratios) / min(ratios) > 1 + 1e-9:
        raise ValueError("T_list must be increasing with geometric spacing")
    if reference == "auto":
        reference = "expm" if (env is None or model.markovian) else "fine"
    ref_formula = formula if formula.order >= 2 else suzuki_formula(2)
    T_ref = ref_factor * max(T_list)

    if observable == "full_channel":
        if reference == "expm":
            ref = closed_reference(model, t)
        else:
            ref = trotter_channel(model, env, ref_formula, t, T_ref, substeps, backend, max_dim)
        measure = lambda T, m: channel_distance(  # noqa: E731
            trotter_channel(model, env, formula, t, T, m, backend, max_dim), ref)
    else:
        site, op = observable
        inputs = random_product_inputs(model.n_sites, n_states, seed)
        ref = trotter_states(model, env, ref_formula, t, T_ref, inputs, substeps, max_dim)
        measure = lambda T, m: local_observable_error(  # noqa: E731
            trotter_states(model, env, formula, t, T, inputs, m, max_dim), ref, site,
            model.n_sites, op)

    rows = []
    for T in T_list:
        err = measure(T, substeps)
        row = {"T": T, "dt": t / T, "err": err}
        if check_substeps:
            row["substep_shift"] = abs(measure(T, 2 * substeps) - err)
        rows.append(row)
    errs = [r["err"] for r in rows]
    for k, r in enumerate(rows):
        r["flagged"] = bool(k > 0 and errs[k] > errs[k - 1])
        if k >= 1:
            r["slope_running"] = math.log(errs[k] / errs[k - 1]) / math.log(rows[k]["dt"] / rows[k - 1]["dt"]) \
                if errs[k] > 0 and errs[k - 1] > 0 else float("nan")
        else:
            r["slope_running"] = float("nan")
    slope, _, r2, _ = fit_slope([r["dt"] for r in rows], errs)
    return {"P": formula.order, "slope": slope, "r2": r2, "rows": rows,
            "monotone": not any(r["flagged"] for r in rows),
            "reference": reference, "T_ref": None if reference == "expm" else T_ref}


def trotter_snapshots(model: LatticeModel, env: DiscretizedEnvironment | None,
                      formula: ProductFormula, t: float, T: int, inputs: np.ndarray,
                      substeps: int = 1, max_dim: int = DEFAULT_MAX_DIM) -> tuple:
    """Full system-plus-bath pure states after every Trotter step.

    Returns (backend, [(time, psi), ...]) with ``psi`` in the tensor layout.
    """
    be = TensorBackend(model, env, t, max_dim)
    psi = be.initial_pure(inputs)
    per_step = len(stage_schedule(formula, t, 1))
    schedule = stage_schedule(formula, t, T)
    snaps = []
    for j in range(T):
        psi = _run_pure(be, psi, schedule[j * per_step:(j + 1) * per_step], substeps)
        snaps.append(((j + 1) * t / T, psi))
    return be, snaps
