import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.linalg import expm
from scipy.stats import poisson

from opensim import envdisc as E, model as M, trotter as TR
from opensim.linops import channel_distance


def _unit_gauss():
    return M.gaussian_coupling(1.0, 1.0)


# --- smooth cutoff -----------------------------------------------------------


def test_cutoff_identical_inside_and_zero_outside():
    v = E.smooth_cutoff(_unit_gauss(), 4.0)
    assert v(1.0) == _unit_gauss()(1.0)
    assert v(6.5) == 0
    assert v.support_radius == 6.0


def test_cutoff_of_constant_keeps_value_at_t_star():
    c = M.CouplingFunction(lambda t: 0.7 * np.ones_like(t), math.inf, 0.7)
    v = E.smooth_cutoff(c, 2.0)
    assert v(2.0) == pytest.approx(0.7, abs=0)
    assert v(4.01) == 0


def test_cutoff_transition_matches_convolution_oracle():
    # window = indicator of [-L, L] convolved with the unit-mass bump on [-1, 1]
    t_star = 2.0
    v = E.smooth_cutoff(_unit_gauss(), t_star)
    t = t_star + 1.0
    Z = quad(lambda y: math.exp(-1 / (1 - y * y)), -1, 1, epsabs=1e-14)[0]
    # only the right edge contributes: int_{-1}^{L - t} phi(y) dy, L = t* + 1
    window = quad(lambda y: math.exp(-1 / (1 - y * y)), -1, t_star + 1 - t, epsabs=1e-14)[0] / Z
    out = v(t).real
    assert 0 < out < _unit_gauss()(t).real
    assert abs(out - window * math.exp(-t * t)) < 1e-8


def test_mollifier_unit_mass():
    Z = quad(lambda y: math.exp(-1 / (1 - y * y)), -1, 1, epsabs=1e-15, epsrel=1e-13)[0]
    assert abs(E.mollifier_normalization() - Z) < 1e-10
    assert abs(quad(lambda y: float(E.mollifier(np.array([y]))[0]), -1, 1, epsabs=1e-14)[0] - 1) < 1e-10


def test_cutoff_rejects_nonpositive_t_star():
    with pytest.raises(ValueError):
        E.smooth_cutoff(_unit_gauss(), 0.0)


# --- Legendre segment basis --------------------------------------------------


def test_degree_zero_is_flat():
    assert E.legendre_segment(3, 0, 0.5, 1.6) == pytest.approx(math.sqrt(2.0))


def test_degree_one_vanishes_at_midpoint():
    assert E.legendre_segment(0, 1, 0.4, 0.2) == pytest.approx(0.0, abs=1e-15)


def test_zero_outside_segment():
    assert E.legendre_segment(1, 2, 0.5, 0.49) == 0 and E.legendre_segment(1, 2, 0.5, 1.0) == 0


def test_orthonormality_up_to_degree_six():
    eta = 0.3
    for n, n2 in ((0, 0), (0, 1)):
        for j in range(7):
            for j2 in range(7):
                lo, hi = min(n, n2) * eta, (max(n, n2) + 1) * eta
                val = quad(lambda s: float(E.legendre_segment(n, j, eta, s) * E.legendre_segment(n2, j2, eta, s)),
                           lo, hi, points=[eta * (min(n, n2) + 1)], epsabs=1e-13, limit=200)[0]
                assert abs(val - (1.0 if (n, j) == (n2, j2) else 0.0)) < 1e-10


# --- coefficients and discretized kernel ---------------------------------------


def _box(c=1.0, r=1.0):
    return M.CouplingFunction(lambda t: c * np.ones_like(t), r, abs(c))


def test_constant_coupling_coefficients():
    env = E.DiscretizedEnvironment(0.25, 3, 1, 1.0, 1.0)
    C = E.coefficients(env, _box(0.8), 0.5)
    # segment [0, 0.25) lies fully inside the support around t = 0.5
    assert abs(C[(0, 0)] - 0.8 * math.sqrt(0.25)) < 1e-12
    for j in (1, 2, 3):
        assert abs(C[(j, 0)]) < 1e-12


@settings(max_examples=10, deadline=None)
@given(st.floats(0.2, 1.5), st.floats(-1.0, 1.0), st.floats(0.05, 0.5))
def test_coefficients_bounded_by_c0_sqrt_eta(sigma, t, eta):
    v = E.smooth_cutoff(M.gaussian_coupling(0.9, sigma), 0.5, 0.25)
    env = E.DiscretizedEnvironment(eta, 2, 1, v.support_radius, 1.0)
    assert all(abs(c) <= v.c0 * math.sqrt(eta) * (1 + 1e-12) for c in E.coefficients(env, v, t).values())


def test_coefficients_time_translation():
    v = E.smooth_cutoff(M.gaussian_coupling(1.0, 0.5), 0.5, 0.25)
    env = E.DiscretizedEnvironment(0.2, 2, 1, v.support_radius, 1.0)
    a = E.coefficients(env, v, 0.37)
    b = E.coefficients(env, v, 0.37 + 0.2)
    for (j, n), c in a.items():
        assert abs(b[(j, n + 1)] - c) < 1e-12


def test_active_segment_count_bound():
    v = E.smooth_cutoff(M.gaussian_coupling(1.0, 0.5), 0.5, 0.25)
    env = E.DiscretizedEnvironment(0.2, 2, 1, v.support_radius, 1.0)
    per_time = len(E.coefficients(env, v, 0.3))
    assert per_time <= (env.j_max + 1) * (2 * env.r / env.eta + 2)


def test_piecewise_polynomial_kernel_reconstructed_exactly():
    # v = 1 + 0.3 t on [-1, 1]; segment edges and grid times are multiples of eta
    v = M.CouplingFunction(lambda t: 1 + 0.3 * t, 1.0, 1.3)
    env = E.DiscretizedEnvironment(0.25, 1, 1, 1.0, 1.0)
    assert E.kernel_error_grid(env, v, np.arange(0, 1.01, 0.25)) < 1e-9


def test_discretized_kernel_vanishes_beyond_window():
    v = E.smooth_cutoff(M.gaussian_coupling(1.0, 0.25), 0.25, 0.125)
    env = E.DiscretizedEnvironment(0.2, 1, 1, v.support_radius, 3.0)
    assert E.discretized_kernel(env, v, 0.0, 2 * v.support_radius + env.eta + 0.01) == 0


def test_kernel_error_order_under_eta_halving():
    v = M.builtin("gauss_chain3").coupling[0]
    for j in (0, 1):
        rows = E.kernel_scan(v, j, [0.4, 0.2, 0.1], n_grid=11)
        assert rows[0]["fitted_order"] >= j + 0.7
        assert all(r["max_abs_err"] <= r["kernel_bound"] for r in rows)


# --- budgets and selection ---------------------------------------------------


def test_budget_decreases_to_zero():
    v = E.smooth_cutoff(_unit_gauss(), 3.0)
    vals = [E.kernel_error_budget(v, eta, 1, 1.0, 3) for eta in (0.1, 0.01, 0.001, 1e-4)]
    assert all(b > a for a, b in zip(vals[1:], vals))
    assert vals[-1] < 1e-3


def test_kappa_doubling_ratio():
    v = E.smooth_cutoff(_unit_gauss(), 3.0)
    r, eta, j = v.support_radius, 0.1, 2
    ratio = E.per_bond_kappa(v, 2 * eta, j, 1.0) / E.per_bond_kappa(v, eta, j, 1.0)
    assert ratio == pytest.approx(2 ** (j + 1) * (2 * r + 2 * eta) / (2 * r + eta), rel=1e-13)


def test_budget_missing_derivative_bound_rejected():
    v = M.CouplingFunction(lambda t: np.ones_like(t), 1.0, 1.0)
    with pytest.raises(ValueError):
        E.kernel_error_budget(v, 0.1, 1, 1.0, 3)


@pytest.mark.parametrize("eta,j_max", [(0.25, 2), (0.25, 0), (0.75, 0)])
def test_budget_bounds_measured_channel_error(eta, j_max):
    """Kernel budget against a finer-discretization channel oracle.

    A single emitter (sigma- coupling, H = 0) holds at most one excitation, so
    d = 2 is exact and the two channels differ only through the kernel.
    """
    v = M.builtin("gauss_chain3").coupling[0]
    m = M.LatticeModel(1, (), ((0, M.SM),), (v,), "emitter")
    P2 = TR.suzuki_formula(2)
    coarse = E.DiscretizedEnvironment(eta, j_max, 2, v.support_radius, 1.0)
    fine = E.DiscretizedEnvironment(0.125, 2, 2, v.support_radius, 1.0)
    kw = dict(substeps=4, max_dim=4096)
    dist = channel_distance(TR.trotter_channel(m, coarse, P2, 1.0, 8, **kw),
                            TR.trotter_channel(m, fine, P2, 1.0, 8, **kw))
    assert dist > 0
    assert E.kernel_error_budget(v, eta, j_max, 1.0, 2) >= dist
    kappa = E.measured_kappa(coarse, v, 1.0) + E.measured_kappa(fine, v, 1.0)
    assert math.expm1(2 * kappa) >= dist


def test_selection_formula_values():
    ch = E.select_discretization(3, 1.0, 1e-2, 2, 4.0)
    assert ch.env.eta == pytest.approx((1e-2 / 48) ** (1 / 3), rel=1e-12)
    assert ch.env.j_max == 2
    ch8 = E.select_discretization(3, 1.0, 8e-2, 2, 4.0)
    assert ch8.env.eta == pytest.approx(2 * ch.env.eta, rel=1e-12)


def test_truncation_level_log_law():
    a = E.truncation_level(4, 1.0, 1e-3, 0.1, 1.0)
    b = E.truncation_level(8, 1.0, 1e-3, 0.1, 1.0)
    assert b - a == pytest.approx(2 * math.log(2), abs=1e-12)


def test_selection_clamps_eta_with_warning():
    with pytest.warns(UserWarning):
        ch = E.select_discretization(2, 0.1, 0.9, 1, 0.1)
    assert ch.env.eta == 0.1


def test_selection_rejects_bad_delta():
    with pytest.raises(ValueError):
        E.select_discretization(3, 1.0, 1.5, 2, 1.0)


# --- occupation tails ----------------------------------------------------------


def test_vacuum_has_no_tail():
    psi = np.zeros(2 * 5)
    psi[0] = 1
    assert all(E.occupation_tail(psi, (2, 5), 1, d) == 0 for d in range(1, 5))


def test_coherent_state_tail_matches_poisson():
    dim, alpha = 40, 0.5
    a = E.annihilation(dim)
    psi = expm(alpha * a.conj().T - np.conj(alpha) * a)[:, 0]
    for d in range(1, 7):
        tail_prob = E.occupation_tail(psi, (dim,), 0, d) ** 2
        assert abs(tail_prob - poisson.sf(d - 1, abs(alpha) ** 2)) < 1e-6


def test_tail_nested():
    rng = np.random.default_rng(3)
    psi = rng.normal(size=2 * 6 * 6) + 1j * rng.normal(size=72)
    psi /= np.linalg.norm(psi)
    tails = [E.occupation_tail(psi, (2, 6, 6), 2, d) for d in range(7)]
    assert all(b <= a for a, b in zip(tails, tails[1:]))


def test_tail_axis_out_of_range():
    with pytest.raises(IndexError):
        E.occupation_tail(np.ones(4), (2, 2), 2, 1)
