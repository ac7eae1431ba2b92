"""
Product-formula order on a closed and an open chain
===================================================

Split the chain's bonds into two groups of commuting terms and alternate their
evolution. Halving the time step should shrink the channel error by 2^P for an
order-P formula.
"""

import numpy as np

from opensim import model, trotter
from opensim.envdisc import DiscretizedEnvironment

# A three-site transverse-field Ising chain with no bath: the exact propagator is one expm.
tfim = model.builtin("tfim3")
for P in (1, 2, 4):
    scan = trotter.order_scan(tfim, None, trotter.suzuki_formula(P), 1.0, [4, 8, 16])
    errs = ", ".join(f"{r['err']:.2e}" for r in scan["rows"])
    print(f"closed  P={P}: errors {errs}  slope {scan['slope']:.3f}")

# Now attach a smooth bath to each bond. The bath is replaced by finitely many
# truncated bosonic modes and there is no closed form, so the reference is the
# same circuit run with 16 times more steps.
chain = model.builtin("gauss_chain3")
env = DiscretizedEnvironment(1.0, 2, 3, chain.coupling[0].support_radius, 1.0)
for P in (1, 2):
    scan = trotter.order_scan(chain, env, trotter.suzuki_formula(P), 1.0, [4, 8, 16], substeps=2,
                              max_dim=20000)
    print(f"open    P={P}: slope {scan['slope']:.3f} against a T={scan['T_ref']} reference")

# Stage weights of the fourth-order formula: some are negative (backward steps).
f4 = trotter.suzuki_formula(4)
print("fourth-order A weights:", np.round(f4.eps, 4))
print("fourth-order B weights:", np.round(f4.mu, 4))
