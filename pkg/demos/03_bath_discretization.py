"""
Replacing a continuous bath by a few truncated modes
====================================================

The bath correlation function of a smooth coupling is approximated by
projecting the coupling onto Legendre polynomials on short time segments.
Each segment/degree pair becomes one bosonic mode, truncated to d levels.
"""

from opensim import envdisc, model, scans, trotter

v = model.builtin("gauss_chain3").coupling[0]
print(f"coupling support radius {v.support_radius}, peak {v.c0}")

# Kernel error against segment length: the order grows with the polynomial degree.
for j_max in (0, 1, 2):
    rows = envdisc.kernel_scan(v, j_max, [0.4, 0.2, 0.1, 0.05], n_grid=11)
    print(f"j_max={j_max}: max|K~ - K| = " + ", ".join(f"{r['max_abs_err']:.1e}" for r in rows)
          + f"  fitted order {rows[0]['fitted_order']:.2f}")

# Occupation of each mode falls off exponentially in the level index, which is
# why a small d suffices.
chain = model.dephasing_gaussian_chain(2)
env = envdisc.DiscretizedEnvironment(1.75, 0, 8, chain.coupling[0].support_radius, 1.0)
rows = scans.occupation_tail_scan(chain, env, trotter.suzuki_formula(2), 1.0, 8,
                                  trotter.random_product_inputs(2, 3, 0), max_dim=10**5)
for r in rows:
    print(f"time {r['time']:.3f}: least steep semi-log tail slope {r['max_slope']:.2f}")

# The recommended discretization for a target error.
choice = envdisc.select_discretization(3, 1.0, 1e-2, 2, v.support_radius)
print(f"for delta=1e-2: eta={choice.env.eta:.4f}, j_max={choice.env.j_max}, d={choice.env.d}")
print("modes per bond over [0, t]:", len(choice.env.modes()))
