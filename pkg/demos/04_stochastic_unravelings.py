"""
Classical noise averages in place of a bath
===========================================

When every jump operator is Hermitian the bath acts like classical Gaussian
noise. Averaging noisy unitary circuits over noise samples then reproduces
the open-system channel, with a Monte-Carlo error that falls as 1/sqrt(n).
"""

import math

import numpy as np

from opensim import lindblad, model, scans, stochastic

# White noise on a single qubit: the coherence decays as exp(-2t).
qubit = model.builtin("dephasing_qubit")
plus = np.full((2, 2), 0.5, dtype=complex)
for n in (1000, 4000, 16000):
    est = stochastic.unraveled_channel(qubit, 1.0, 1 / 64, n, seed=0)
    coh = est.channel.apply(plus)[0, 1].real
    print(f"n={n:5d}: coherence {coh:.4f} +/- {0.5 * est.stderr[2, 2]:.4f} (exact {0.5 * math.exp(-2):.4f})")

# Two coupled qubits: the trajectory average against the exact Lindblad propagator.
pair = model.builtin("xx_dephasing2")
rows, summary = scans.wiener_scan(pair, {"n_samples": 4000, "t_list": [0.5, 1.0]})
for r in rows:
    print(f"t={r['t']}: distance {r['distance']:.4f}, noise {r['noise']:.4f}, path budget {r['path_budget']:.4f}")

# A structured (non-Markovian) bath: Gaussian increments with the bath's own kernel.
rows, summary = scans.ensemble_scan(model.builtin("zgauss_chain3"), {"n_samples": 4000})
print(f"Gaussian ensemble vs discretized bath: distance {summary['distance']:.4f} "
      f"(bound {summary['bound']:.4f}); distance to the bath-free circuit {summary['distance_to_closed']:.3f}")

# Wiener paths are rougher than Lipschitz: local regularity close to 1/2.
path = stochastic.sample_wiener(1, 1.0, 2.0**-14, seed=1)
print(f"Holder exponent estimate {stochastic.holder_exponent(path):.3f}")
