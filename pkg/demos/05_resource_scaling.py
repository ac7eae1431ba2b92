"""
How the circuit cost scales
===========================

Unit-prefactor resource counts for each algorithm, and their log-log slopes
in system size and target error.
"""

import numpy as np

from opensim import resources

print(f"{'algorithm':>15} {'T':>6} {'depth':>10} {'gates':>10} {'ancillas':>10}")
for alg in resources.ALGORITHMS:
    est = resources.resource_estimate(alg, 8, 4.0, 1e-3, p=2)
    print(f"{alg:>15} {est.T:6d} {est.depth:10.1f} {est.gates:10.1f} {est.ancillas:10.1f}")


def slope(rows, x, y):
    return np.polyfit(np.log([r[x] for r in rows]), np.log([r[y] for r in rows]), 1)[0]


print()
for p in (1, 2, 3):
    by_n = resources.scaling_table("nonmarkovian", "N", [8, 16, 32, 64], {"p": p})
    by_delta = resources.scaling_table("nonmarkovian", "delta", [1e-2, 1e-3, 1e-4], {"p": p})
    print(f"p={p}: gates ~ N^{slope(by_n, 'N', 'gates'):.3f}, "
          f"ancillas ~ delta^{slope(by_delta, 'delta', 'ancillas'):.3f}")
