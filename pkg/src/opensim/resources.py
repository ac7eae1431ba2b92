"""Unit-prefactor resource counts for the simulation algorithms.

Every count is the bare scaling law with constant 1. Polylogarithmic factors
hidden in soft-O bounds are not folded into the counts; they are returned in
``log_factor`` (natural log) so callers can multiply them in if wanted.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping

ALGORITHMS = ("nonmarkovian", "nondissipative", "local_obs", "wiener", "dilation")
SWEEPABLE = ("N", "t", "delta", "p")
DILATION_QUDIT_DIM = 5


@dataclass(frozen=True)
class ResourceEstimate:
    algorithm: str
    N: int
    t: float
    delta: float
    p: int
    r: float
    T: int                 # Trotter (or dilation) time steps
    depth: float
    gates: float
    ancillas: float        # 0 for ancilla-free algorithms
    eta: float | None = None
    d: int | None = None
    j_max: int | None = None
    order: int | None = None       # product-formula order actually used
    gaussian_dim: float | None = None
    log_factor: float = 1.0

    def as_row(self) -> dict:
        return asdict(self)


def _check(algorithm, N, t, delta, p, r):
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
    if N < 2:
        raise ValueError("N must be >= 2")
    if t <= 0:
        raise ValueError("t must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if p < 1:
        raise ValueError("p must be >= 1")
    if r <= 0:
        raise ValueError("r must be positive")


def resource_estimate(algorithm: str, N: int, t: float, delta: float, p: int = 2,
                      r: float = 1.0) -> ResourceEstimate:
    _check(algorithm, N, t, delta, p, r)
    x = N * t / delta

    if algorithm in ("nonmarkovian", "nondissipative"):
        P = 2 * p
        T = math.ceil(t * x ** (1 / P))
        depth = t * x ** (1 / p)
        gates = N * depth
        if algorithm == "nondissipative":
            return ResourceEstimate(algorithm, N, t, delta, p, r, T, depth, gates, 0.0, order=P,
                                    gaussian_dim=N * t * x ** (1 / p))
        j_max = p
        eta = (delta / (N * t * r * r)) ** (1 / (j_max + 1))
        d = max(1, math.ceil(math.log(N * N * t * t * r * r / (delta * eta**1.5))))
        ancillas = N * x ** (1 / (p + 1))
        return ResourceEstimate(algorithm, N, t, delta, p, r, T, depth, gates, ancillas, eta, d, j_max,
                                P, log_factor=max(1.0, math.log(d)))

    if algorithm == "local_obs":
        # one-dimensional lattice: t^(D+1) = t^2 replaces N t
        y = t * t / delta
        P = 2 * p
        T = math.ceil(t * y ** (1 / P))
        depth = t * y ** (1 / p)
        return ResourceEstimate(algorithm, N, t, delta, p, r, T, depth, N * depth, N * y ** (1 / (p + 1)),
                                j_max=p, order=P)

    if algorithm == "wiener":
        L = math.log(x)
        T = math.ceil(t * L)
        return ResourceEstimate(algorithm, N, t, delta, p, r, T, t, N * t, 0.0, log_factor=L)

    # dilation: third-order local dilation, one qudit per bond reset every step
    T = math.ceil(t * x ** (1 / 3))
    return ResourceEstimate(algorithm, N, t, delta, p, r, T, float(T), float(N * T), float(N - 1),
                            d=DILATION_QUDIT_DIM, order=3)


def scaling_table(algorithm: str, sweep: str, values: Iterable, base: Mapping | None = None) -> list:
    """Rows of ``resource_estimate`` with one of N, t, delta, p swept."""
    if sweep not in SWEEPABLE:
        raise ValueError(f"sweep must be one of {SWEEPABLE}")
    params = {"N": 8, "t": 1.0, "delta": 1e-3, "p": 2, "r": 1.0}
    params.update(base or {})
    rows = []
    for v in values:
        params[sweep] = v
        rows.append(resource_estimate(algorithm, int(params["N"]), float(params["t"]), float(params["delta"]),
                                      int(params["p"]), float(params["r"])).as_row())
    return rows
