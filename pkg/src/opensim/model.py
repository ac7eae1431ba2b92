"""Open lattice models: Hamiltonian and jump terms, coupling functions, kernels.

A chain of ``n_sites`` qubits carries nearest-neighbour Hamiltonian terms and
jump operators.  Every term is stored as ``(site, op)`` where ``op`` acts on
one site or on the pair ``(site, site + 1)``.  Non-Markovian models attach one
jump and one coupling function to each bond; Markovian models carry the
string ``"markovian"`` instead and may list any number of jumps.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from numpy.polynomial import hermite as _herm

from .linops import SM, SX, SZ, commutator, embed, hermiticity_defect, spectral_norm

NORM_TOL = 1e-10
COMMUTING_TOL = 1e-12


# ----------------------------------------------------------------------------
# quadrature

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)


def _composite_gl(f, a: float, b: float, panels: int) -> complex:
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return np.dot(w, f(x))


def integrate(f: Callable, a: float, b: float, rel_tol: float = 1e-9, abs_tol: float = 1e-300,
              max_doublings: int = 12) -> complex:
    """Composite 32-point Gauss-Legendre quadrature of a vectorized ``f`` on [a, b].

    Starts from one panel per unit length and doubles the panel count until
    the relative change drops below ``rel_tol``.
    """
    if b <= a:
        return 0.0
    panels = max(1, int(math.ceil(b - a)))
    prev = _composite_gl(f, a, b, panels)
    for _ in range(max_doublings):
        panels *= 2
        cur = _composite_gl(f, a, b, panels)
        if abs(cur - prev) <= max(rel_tol * abs(cur), abs_tol):
            return cur
        prev = cur
    return cur


# ----------------------------------------------------------------------------
# coupling functions and kernels


@dataclass(frozen=True)
class CouplingFunction:
    """Temporal coupling profile v(t) of one bond to its bosonic bath.

    ``fn`` must accept numpy arrays.  ``support_radius`` is finite for
    compact couplings, which evaluate to exactly zero outside [-r, r].
    ``deriv_bounds[mu - 1]`` bounds sup|v^(mu)|.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    support_radius: float = math.inf
    c0: float = 1.0
    deriv_bounds: tuple = ()
    name: str = "custom"
    params: Mapping = field(default_factory=dict)

    @property
    def compact(self) -> bool:
        return math.isfinite(self.support_radius)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.asarray(self.fn(t), dtype=complex)
        if self.compact:
            out = np.where(np.abs(t) <= self.support_radius, out, 0.0)
        return out

    def deriv_bound(self, mu: int) -> float:
        if mu < 1 or mu > len(self.deriv_bounds):
            raise ValueError(f"coupling {self.name!r} has no derivative bound D_{mu}")
        return float(self.deriv_bounds[mu - 1])

    def scaled(self, c: complex) -> "CouplingFunction":
        fn = self.fn
        return CouplingFunction(lambda t: c * fn(t), self.support_radius, abs(c) * self.c0,
                                tuple(abs(c) * D for D in self.deriv_bounds), self.name,
                                dict(self.params, scale=c))


def gaussian_derivative_bounds(sigma: float, n: int) -> tuple:
    """sup_t |d^mu/dt^mu exp(-(t/sigma)^2)| for mu = 1..n, via Hermite polynomials.

    d^mu/dx^mu e^{-x^2} = (-1)^mu H_mu(x) e^{-x^2}; the supremum is taken on
    a fine grid where the extrema lie (|x| <= sqrt(2 mu + 1) + 1).
    """
    out = []
    for mu in range(1, n + 1):
        xmax = math.sqrt(2 * mu + 1) + 2
        x = np.linspace(-xmax, xmax, 20001)
        coef = np.zeros(mu + 1)
        coef[mu] = 1
        vals = np.abs(_herm.hermval(x, coef) * np.exp(-x * x))
        # refine around the grid maximum
        k = int(np.argmax(vals))
        xf = np.linspace(x[max(k - 1, 0)], x[min(k + 1, x.size - 1)], 2001)
        peak = np.max(np.abs(_herm.hermval(xf, coef) * np.exp(-xf * xf)))
        out.append(float(peak) / sigma**mu)
    return tuple(out)


def gaussian_coupling(g: float = 1.0, sigma: float = 1.0, cut: float | None = None,
                      n_bounds: int = 12) -> CouplingFunction:
    """v(t) = g exp(-(t/sigma)^2), optionally hard-cut to [-cut, cut].

    A hard cut is only meant for cuts far in the tail (the jump is below
    double precision when cut >= 6 sigma); use ``smooth_cutoff`` otherwise.
    """
    bounds = tuple(abs(g) * D for D in gaussian_derivative_bounds(sigma, n_bounds))
    return CouplingFunction(lambda t: g * np.exp(-(t / sigma) ** 2),
                            math.inf if cut is None else float(cut), abs(g), bounds,
                            "gaussian", {"g": g, "sigma": sigma, "cut": cut})


def exponential_coupling(g: float = 1.0, tau: float = 1.0, cut: float | None = None) -> CouplingFunction:
    """v(t) = g exp(-|t|/tau); not differentiable at 0, so only D_1 is known."""
    return CouplingFunction(lambda t: g * np.exp(-np.abs(t) / tau),
                            math.inf if cut is None else float(cut), abs(g), (abs(g) / tau,),
                            "exp", {"g": g, "tau": tau, "cut": cut})


def table_coupling(times: Sequence[float], values: Sequence[complex],
                   deriv_bounds: Sequence[float] = ()) -> CouplingFunction:
    """Cubic-spline coupling through sampled values, zero outside the table."""
    from scipy.interpolate import CubicSpline

    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=complex)
    re, im = CubicSpline(times, values.real), CubicSpline(times, values.imag)
    r = float(max(abs(times[0]), abs(times[-1])))

    def fn(t):
        inside = (t >= times[0]) & (t <= times[-1])
        return np.where(inside, re(t) + 1j * im(t), 0.0)

    return CouplingFunction(fn, r, float(np.max(np.abs(values))), tuple(deriv_bounds), "table",
                            {"n_points": int(times.size)})


@dataclass(frozen=True)
class MemoryKernel:
    """Vacuum two-point function K(tau) of a coupling function."""

    coupling: CouplingFunction
    grid: np.ndarray
    values: np.ndarray
    l_inf: float
    l_one: float

    def __call__(self, tau: float) -> complex:
        return vacuum_kernel_value(self.coupling, tau)


def vacuum_kernel_value(v: CouplingFunction, tau: float, rel_tol: float = 1e-9) -> complex:
    """K(tau) = int v(u) conj(v(u - tau)) du for a compact coupling."""
    if not v.compact:
        raise ValueError("vacuum kernel needs a compactly supported coupling; apply smooth_cutoff first")
    r = v.support_radius
    a, b = max(-r, tau - r), min(r, tau + r)
    if b <= a:
        return 0.0 + 0.0j
    return complex(integrate(lambda u: v(u) * np.conj(v(u - tau)), a, b, rel_tol, abs_tol=1e-15))


def vacuum_kernel_from_coupling(v: CouplingFunction, grid: Sequence[float]) -> MemoryKernel:
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) < 0):
        raise ValueError("kernel grid must be sorted")
    vals = np.array([vacuum_kernel_value(v, tau) for tau in grid])
    l_inf = float(np.max(np.abs(vals))) if vals.size else 0.0
    l_one = float(np.trapezoid(np.abs(vals), grid)) if vals.size > 1 else 0.0
    return MemoryKernel(v, grid, vals, l_inf, l_one)


# ----------------------------------------------------------------------------
# lattice model


def _span(op: np.ndarray, local_dim: int) -> int:
    n = int(round(math.log(op.shape[0], local_dim)))
    if local_dim**n != op.shape[0] or n not in (1, 2):
        raise ValueError(f"term of size {op.shape[0]} is not a one- or two-site operator")
    return n


@dataclass(frozen=True)
class LatticeModel:
    """Nearest-neighbour chain of qubits coupled to per-bond environments.

    ``coupling`` is either ``"markovian"`` or a tuple with one coupling function
    per bond (for ``n_sites == 1``, a single pseudo-bond).
    """

    n_sites: int
    h_terms: tuple = ()
    j_terms: tuple = ()
    coupling: object = "markovian"
    name: str = "model"
    local_dim: int = 2

    def __post_init__(self):
        h = tuple((int(s), np.asarray(op, dtype=complex)) for s, op in self.h_terms)
        j = tuple((int(s), np.asarray(op, dtype=complex)) for s, op in self.j_terms)
        for s, op in h + j:
            span = _span(op, self.local_dim)
            if not 0 <= s <= self.n_sites - span:
                raise ValueError(f"term at site {s} spanning {span} sites leaves the chain")
        object.__setattr__(self, "h_terms", h)
        object.__setattr__(self, "j_terms", j)
        if not self.markovian:
            cpl = tuple(self.coupling)
            if len(cpl) != self.n_bonds or len(j) != self.n_bonds:
                raise ValueError("non-Markovian models need one jump and one coupling per bond")
            object.__setattr__(self, "coupling", cpl)

    @property
    def markovian(self) -> bool:
        return isinstance(self.coupling, str) and self.coupling == "markovian"

    @property
    def n_bonds(self) -> int:
        return max(1, self.n_sites - 1)

    @property
    def dims(self) -> tuple:
        return (self.local_dim,) * self.n_sites

    @property
    def dim(self) -> int:
        return self.local_dim**self.n_sites

    def bond_of(self, site: int) -> int:
        """Bond that owns a term starting at ``site`` (used by odd/even splits)."""
        return min(site, self.n_bonds - 1)

    def full(self, site: int, op: np.ndarray) -> np.ndarray:
        return embed(op, site, self.dims)

    def hamiltonian(self) -> np.ndarray:
        H = np.zeros((self.dim, self.dim), dtype=complex)
        for s, op in self.h_terms:
            H += self.full(s, op)
        return H

    def bond_hamiltonians(self) -> list:
        """Full-space Hamiltonian summed per owning bond."""
        out = [np.zeros((self.dim, self.dim), dtype=complex) for _ in range(self.n_bonds)]
        for s, op in self.h_terms:
            out[self.bond_of(s)] += self.full(s, op)
        return out

    def jumps(self) -> list:
        return [self.full(s, op) for s, op in self.j_terms]

    def with_terms(self, h_terms=None, j_terms=None, coupling=None, name=None) -> "LatticeModel":
        return LatticeModel(self.n_sites, self.h_terms if h_terms is None else h_terms,
                            self.j_terms if j_terms is None else j_terms,
                            self.coupling if coupling is None else coupling,
                            name or self.name, self.local_dim)

    def closed(self) -> "LatticeModel":
        """Same Hamiltonian with the environment removed."""
        return LatticeModel(self.n_sites, self.h_terms, (), "markovian", self.name + "_closed",
                            self.local_dim)


@dataclass
class ValidationReport:
    h_norms: list
    j_norms: list
    h_hermiticity: list
    norm_violations: list
    hermiticity_violations: list
    commutator_defect: float | None = None
    commutator_dagger_defect: float | None = None

    @property
    def ok(self) -> bool:
        comm_ok = all(x is None or x < COMMUTING_TOL
                      for x in (self.commutator_defect, self.commutator_dagger_defect))
        return not self.norm_violations and not self.hermiticity_violations and comm_ok


def validate_model(model: LatticeModel, markovian_commuting: bool = False) -> ValidationReport:
    """Check the standing assumptions: Hermitian terms, unit norm bounds and,
    when requested, pairwise commuting jumps (with and without adjoint)."""
    h_norms = [spectral_norm(op) for _, op in model.h_terms]
    j_norms = [spectral_norm(op) for _, op in model.j_terms]
    herm = [hermiticity_defect(op) for _, op in model.h_terms]
    # bound is per bond, so sum terms owned by the same bond
    per_bond = {}
    for s, op in model.h_terms:
        b = model.bond_of(s)
        per_bond[b] = per_bond.get(b, 0) + model.full(s, op)
    violations = [f"h bond {b}: norm {spectral_norm(H):.6g} > 1" for b, H in per_bond.items()
                  if spectral_norm(H) > 1 + NORM_TOL]
    violations += [f"j term {k}: norm {n:.6g} > 1" for k, n in enumerate(j_norms) if n > 1 + NORM_TOL]
    herm_v = [f"h term {k}: max|A - A^dag| = {d:.3e}" for k, d in enumerate(herm) if d > 1e-12]
    report = ValidationReport(h_norms, j_norms, herm, violations, herm_v)
    if markovian_commuting:
        J = model.jumps()
        c1 = c2 = 0.0
        for a in range(len(J)):
            for b in range(len(J)):
                if a != b:
                    c1 = max(c1, spectral_norm(commutator(J[a], J[b])))
                    c2 = max(c2, spectral_norm(commutator(J[a], J[b].conj().T)))
        report.commutator_defect, report.commutator_dagger_defect = c1, c2
    return report


# ----------------------------------------------------------------------------
# built-in models


def tfim_terms(n_sites: int, zz: float = 1.0, field_x: float = 1.0) -> tuple:
    """Bond terms of H = zz sum Z Z + field_x sum X, each bond owning the X on
    its left site (the last bond also owns the final site), then rescaled so
    the largest bond norm is 1."""
    I = np.eye(2)
    raw = []
    for b in range(n_sites - 1):
        op = zz * np.kron(SZ, SZ) + field_x * np.kron(SX, I)
        if b == n_sites - 2:
            op = op + field_x * np.kron(I, SX)
        raw.append(op)
    scale = max(spectral_norm(op) for op in raw)
    return tuple((b, op / scale) for b, op in enumerate(raw))


def hopping_term(strength: float = 1.0) -> np.ndarray:
    """(XX + YY)/2 = sigma+ sigma- + h.c.; conserves the excitation number."""
    return strength * (np.kron(SM.conj().T, SM) + np.kron(SM, SM.conj().T))


def amplitude_damping_qubit(gamma: float = 1.0) -> LatticeModel:
    return LatticeModel(1, (), ((0, math.sqrt(gamma) * SM),), "markovian", "amplitude_damping_qubit")


def dephasing_qubit(gamma: float = 1.0) -> LatticeModel:
    return LatticeModel(1, (), ((0, math.sqrt(gamma) * SZ),), "markovian", "dephasing_qubit")


def tfim_sigmaz(n_sites: int, gamma: float = 0.5) -> LatticeModel:
    """TFIM chain with a sigma_z dephasing jump on every site (Markovian)."""
    jumps = tuple((s, math.sqrt(gamma) * SZ) for s in range(n_sites))
    return LatticeModel(n_sites, tfim_terms(n_sites), jumps, "markovian", f"tfim{n_sites}_sigmaz")


def gaussian_chain(n_sites: int = 3, g: float = 1.0, sigma: float = 0.25, t_star: float = 0.5,
                   width: float = 0.125, hopping: float = 1.0) -> LatticeModel:
    """Excitation-conserving chain: hopping bonds, sigma- jump on the left site
    of each bond, Gaussian coupling smoothly cut to [-t*-2w, t*+2w]."""
    from .envdisc import smooth_cutoff

    v = smooth_cutoff(gaussian_coupling(g, sigma), t_star, width)
    h = tuple((b, hopping_term(hopping)) for b in range(n_sites - 1))
    j = tuple((b, SM) for b in range(n_sites - 1))
    return LatticeModel(n_sites, h, j, (v,) * (n_sites - 1), f"gauss_chain{n_sites}")


def dephasing_gaussian_chain(n_sites: int = 3, g: float = 1.0, sigma: float = 0.25,
                             t_star: float = 0.5, width: float = 0.125) -> LatticeModel:
    """Non-dissipative chain: TFIM bonds, Hermitian sigma_z jump on the left
    site of each bond, real Gaussian coupling (real symmetric kernel)."""
    from .envdisc import smooth_cutoff

    v = smooth_cutoff(gaussian_coupling(g, sigma), t_star, width)
    j = tuple((b, SZ) for b in range(n_sites - 1))
    return LatticeModel(n_sites, tfim_terms(n_sites), j, (v,) * (n_sites - 1),
                        f"zgauss_chain{n_sites}")


def two_qubit_xx_dephasing(gamma: float = 0.5) -> LatticeModel:
    """Single XX bond with sigma_z dephasing on both sites."""
    jumps = ((0, math.sqrt(gamma) * SZ), (1, math.sqrt(gamma) * SZ))
    return LatticeModel(2, ((0, np.kron(SX, SX)),), jumps, "markovian", "xx_dephasing2")


BUILTINS = {
    "amplitude_damping_qubit": ("one qubit, H = 0, J = sqrt(gamma) sigma-", amplitude_damping_qubit),
    "dephasing_qubit": ("one qubit, H = 0, J = sqrt(gamma) sigma_z", dephasing_qubit),
    "xx_dephasing2": ("two qubits, XX bond, sigma_z dephasing on both sites", two_qubit_xx_dephasing),
    "gauss_chain3": ("3-site hopping chain, sigma- jumps, smooth Gaussian coupling",
                     lambda **kw: gaussian_chain(3, **kw)),
    "zgauss_chain3": ("3-site TFIM chain, sigma_z jumps, smooth Gaussian coupling (non-dissipative)",
                      lambda **kw: dephasing_gaussian_chain(3, **kw)),
}
for _n in range(2, 7):
    BUILTINS[f"tfim{_n}_sigmaz"] = (f"{_n}-site TFIM, sigma_z dephasing on every site",
                                    (lambda n: (lambda **kw: tfim_sigmaz(n, **kw)))(_n))
    BUILTINS[f"tfim{_n}"] = (f"{_n}-site closed TFIM chain",
                             (lambda n: (lambda **kw: LatticeModel(n, tfim_terms(n), (), "markovian",
                                                                   f"tfim{n}")))(_n))
for _n in range(2, 7):
    BUILTINS.setdefault(f"gauss_chain{_n}", (f"{_n}-site hopping chain, sigma- jumps, smooth Gaussian coupling",
                                             (lambda n: (lambda **kw: gaussian_chain(n, **kw)))(_n)))


def list_builtins() -> dict:
    return {name: desc for name, (desc, _) in BUILTINS.items()}


def builtin(name: str, **params) -> LatticeModel:
    if name not in BUILTINS:
        raise KeyError(f"unknown builtin model {name!r}; choose from {sorted(BUILTINS)}")
    return BUILTINS[name][1](**params)


# ----------------------------------------------------------------------------
# JSON model files


def _matrix_from_json(m) -> np.ndarray:
    a = np.asarray(m, dtype=float)
    if a.ndim != 3 or a.shape[-1] != 2:
        raise ValueError("matrix entries must be [re, im] pairs")
    return a[..., 0] + 1j * a[..., 1]


def _matrix_to_json(A: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(A)]


def coupling_from_spec(spec: Mapping) -> object:
    kind = spec.get("kind")
    p = dict(spec.get("params", {}))
    if kind == "markovian":
        return "markovian"
    if kind == "gaussian":
        smooth = p.pop("t_star", None)
        width = p.pop("width", 1.0)
        v = gaussian_coupling(**p)
    elif kind == "exp":
        smooth = p.pop("t_star", None)
        width = p.pop("width", 1.0)
        v = exponential_coupling(**p)
    elif kind == "table":
        smooth = None
        v = table_coupling(p["times"], [complex(*z) if isinstance(z, list) else z for z in p["values"]],
                           p.get("deriv_bounds", ()))
    else:
        raise ValueError(f"unknown coupling kind {kind!r}")
    if smooth is not None:
        from .envdisc import smooth_cutoff

        v = smooth_cutoff(v, smooth, width)
    return v


def model_from_dict(doc: Mapping) -> LatticeModel:
    n = int(doc["n_sites"])
    h = tuple((t["site"], _matrix_from_json(t["matrix"])) for t in doc.get("h_terms", []))
    j = tuple((t["site"], _matrix_from_json(t["matrix"])) for t in doc.get("j_terms", []))
    c = coupling_from_spec(doc.get("coupling", {"kind": "markovian"}))
    if c != "markovian":
        c = (c,) * max(1, n - 1)
    return LatticeModel(n, h, j, c, doc.get("name", "model"))


def model_to_dict(model: LatticeModel, coupling_spec: Mapping | None = None) -> dict:
    return {
        "name": model.name,
        "n_sites": model.n_sites,
        "h_terms": [{"site": s, "matrix": _matrix_to_json(op)} for s, op in model.h_terms],
        "j_terms": [{"site": s, "matrix": _matrix_to_json(op)} for s, op in model.j_terms],
        "coupling": coupling_spec or {"kind": "markovian"},
    }


def load_model(path) -> LatticeModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
