import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import dblquad
from scipy.linalg import expm

from opensim import lindblad as L, model as M, stochastic as S, trotter as TR
from opensim.linops import I2, SX, SY, SZ, channel_distance

PLUS = np.full((2, 2), 0.5, dtype=complex)


def _gauss_kernel():
    return S.SmoothKernel(lambda x: np.exp(-x * x), name="exp(-tau^2)")


# --- increment covariance -----------------------------------------------------------


def test_white_noise_disjoint_intervals_diagonal():
    inc = S.increment_covariance(S.WhiteNoise(), [(0, 0.0, 0.3), (0, 0.3, 1.0), (1, 0.0, 0.5)])
    assert np.allclose(inc.cov, np.diag([0.3, 0.7, 0.5]), atol=1e-15)


def test_white_noise_identical_interval_twice():
    inc = S.increment_covariance(S.WhiteNoise(), [(0, 0.2, 0.6), (0, 0.2, 0.6)])
    assert np.allclose(inc.cov, 0.4, atol=1e-15)


def test_smooth_kernel_matches_nested_quadrature():
    ivs = [(0, 0.0, 0.5), (0, 0.3, 1.1), (0, 1.1, 1.4), (1, 0.0, 0.5)]
    inc = S.increment_covariance(_gauss_kernel(), ivs)
    for i, (bi, a, b) in enumerate(ivs):
        for j, (bj, c, d) in enumerate(ivs):
            want = 0.0 if bi != bj else dblquad(lambda s2, s1: math.exp(-(s1 - s2) ** 2), a, b, c, d,
                                                epsabs=1e-13, epsrel=1e-13)[0]
            assert abs(inc.cov[i, j] - want) < 1e-9


def test_cross_bond_entries_exactly_zero():
    inc = S.increment_covariance(_gauss_kernel(), [(0, 0.0, 1.0), (1, 0.0, 1.0)])
    assert inc.cov[0, 1] == 0 and inc.cov[1, 0] == 0


def test_indefinite_kernel_rejected():
    neg = S.SmoothKernel(lambda x: -np.exp(-x * x))
    with pytest.raises(ValueError, match="indefinite"):
        S.increment_covariance(neg, [(0, 0.0, 0.5), (0, 0.5, 1.0)])


@settings(max_examples=10, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.floats(0, 2), st.floats(0.05, 1)), min_size=1, max_size=6))
def test_covariance_symmetric_psd(raw):
    inc = S.increment_covariance(_gauss_kernel(), [(b, a, a + w) for b, a, w in raw])
    assert np.max(np.abs(inc.cov - inc.cov.T)) < 1e-12
    assert np.min(np.linalg.eigvalsh(inc.cov)) >= -1e-10 * max(1.0, np.max(np.diag(inc.cov)))


def test_vacuum_kernel_matches_model_kernel():
    v = M.builtin("zgauss_chain3").coupling[0]
    K = S.kernel_from_coupling(v)
    for tau in (0.0, 0.4, 1.3):
        assert abs(K(np.array([tau]))[0] - M.vacuum_kernel_value(v, tau).real) < 1e-9


# --- Gaussian sampling ----------------------------------------------------------


def test_zero_covariance_gives_zero_sample():
    inc = S.increment_covariance(S.SmoothKernel(lambda x: 0 * x), [(0, 0.0, 1.0), (0, 1.0, 2.0)])
    assert np.array_equal(S.sample_gaussian(inc, 3), np.zeros(2))


def test_sample_deterministic_per_seed():
    inc = S.increment_covariance(_gauss_kernel(), [(0, 0.0, 1.0), (0, 1.0, 2.0)])
    assert np.array_equal(S.sample_gaussian(inc, 11), S.sample_gaussian(inc, 11))


def test_sample_moments():
    inc = S.increment_covariance(_gauss_kernel(), [(0, 0.0, 0.5), (0, 0.5, 1.0), (0, 1.0, 2.0)])
    n = 100_000
    X = np.stack([S.sample_gaussian(inc, [9, k]) for k in range(n)])
    sd = np.sqrt(np.diag(inc.cov))
    assert np.all(np.abs(X.mean(axis=0)) < 4 * sd / math.sqrt(n))
    emp = X.T @ X / n
    assert np.all(np.abs(emp - inc.cov) <= 0.05 * np.max(np.abs(inc.cov)))


# --- Gaussian circuit ensemble -----------------------------------------------------


def test_zero_kernel_reproduces_closed_trotter():
    m = M.builtin("zgauss_chain3")
    closed = M.LatticeModel(3, m.h_terms, (), "markovian")
    P2 = TR.suzuki_formula(2)
    est = S.ensemble_channel_nondissipative(m, P2, 1.0, 4, 4, 0, kernel=S.SmoothKernel(lambda x: 0 * x))
    assert channel_distance(est.channel, TR.trotter_channel(closed, None, P2, 1.0, 4)) < 1e-12
    assert np.max(est.stderr) < 1e-12


def test_white_kernel_dephasing():
    v = M.builtin("zgauss_chain3").coupling[0]
    m = M.LatticeModel(1, (), ((0, SZ),), (v,), "white dephasing")
    t = 0.5
    est = S.ensemble_channel_nondissipative(m, TR.suzuki_formula(2), t, 2, 10_000, 1, kernel=S.WhiteNoise())
    coh = est.channel.apply(PLUS)[0, 1]
    # only the rho_01 -> rho_01 superoperator entry is nonzero here
    assert abs(coh - 0.5 * math.exp(-2 * t)) < 3 * 0.5 * est.stderr[2, 2] + 1e-12


def test_non_hermitian_jump_rejected():
    with pytest.raises(ValueError, match="Hermitian"):
        S.ensemble_channel_nondissipative(M.builtin("gauss_chain3"), TR.suzuki_formula(2), 1.0, 2, 2, 0)


def test_markovian_model_rejected_by_gaussian_ensemble():
    with pytest.raises(ValueError):
        S.ensemble_channel_nondissipative(M.builtin("dephasing_qubit"), TR.suzuki_formula(2), 1.0, 2, 2, 0)


def test_odd_sample_count_rejected():
    with pytest.raises(ValueError, match="even"):
        S.ensemble_channel_nondissipative(M.builtin("zgauss_chain3"), TR.suzuki_formula(2), 1.0, 2, 3, 0)


# --- Wiener paths ---------------------------------------------------------------


def test_wiener_starts_at_zero_and_is_deterministic():
    a, b = S.sample_wiener(3, 1.0, 1 / 32, 5), S.sample_wiener(3, 1.0, 1 / 32, 5)
    assert np.all(a.values[:, 0] == 0)
    assert np.array_equal(a.values, b.values)


def test_wiener_variance_and_independent_increments():
    n, t = 10_000, 1.0
    W = np.stack([S.sample_wiener(1, t, 1 / 16, k).values[0] for k in range(n)])
    assert abs(W[:, -1].var() / t - 1) < 0.05
    first, second = W[:, 8], W[:, -1] - W[:, 8]
    assert abs(np.corrcoef(first, second)[0, 1]) < 4 / math.sqrt(n)


def test_wiener_grid_mismatch_rejected():
    with pytest.raises(ValueError, match="multiple"):
        S.sample_wiener(1, 1.0, 0.3, 0)
    with pytest.raises(ValueError):
        S.sample_wiener(1, 1.0, 0.0, 0)


# --- interaction-picture Hamiltonian ------------------------------------------------


def test_zero_path_gives_system_hamiltonian():
    m = M.builtin("xx_dephasing2")
    path = S.WienerPath(np.arange(5) * 0.25, np.zeros((2, 5)), None)
    assert np.allclose(S.interaction_hamiltonian(m, path, 0.5), m.hamiltonian(), atol=1e-15)


def test_commuting_terms_unchanged_for_any_path():
    m = M.LatticeModel(3, ((0, np.kron(SZ, SZ)), (1, np.kron(SZ, SZ))), ((0, SZ), (1, SZ), (2, SZ)),
                       "markovian")
    path = S.sample_wiener(3, 1.0, 0.125, 4)
    assert np.allclose(S.interaction_hamiltonian(m, path, 0.75), m.hamiltonian(), atol=1e-14)


def test_single_bond_rotation_sign():
    m = M.LatticeModel(2, ((0, np.kron(SX, I2)),), ((0, np.kron(SZ, I2)),), "markovian")
    path = S.sample_wiener(1, 1.0, 0.125, 2)
    t = 0.625
    w = path.at(t)[0]
    Hbar = S.interaction_hamiltonian(m, path, t)
    J, H = np.kron(SZ, I2), np.kron(SX, I2)
    conj = expm(1j * J * w) @ H @ expm(-1j * J * w)
    assert np.max(np.abs(Hbar - conj)) < 1e-12
    # Pauli identity e^{i w Z} X e^{-i w Z} = cos(2w) X - sin(2w) Y
    assert np.max(np.abs(Hbar - np.kron(math.cos(2 * w) * SX - math.sin(2 * w) * SY, I2))) < 1e-12


def test_interaction_hamiltonian_preserves_spectrum():
    m = M.builtin("xx_dephasing2")
    path = S.sample_wiener(2, 1.0, 0.125, 8)
    ev = np.linalg.eigvalsh(S.interaction_hamiltonian(m, path, 0.5))
    assert np.allclose(ev, np.linalg.eigvalsh(m.hamiltonian()), atol=1e-10)


def test_off_grid_time_rejected():
    path = S.sample_wiener(2, 1.0, 0.125, 0)
    with pytest.raises(ValueError, match="grid"):
        S.interaction_hamiltonian(M.builtin("xx_dephasing2"), path, 0.3)


def test_non_markovian_model_rejected_by_wiener():
    with pytest.raises(ValueError):
        S.unraveled_channel(M.builtin("zgauss_chain3"), 1.0, 0.125, 2, 0)


# --- unraveled channel -------------------------------------------------------------


def test_zero_jumps_give_exact_closed_evolution():
    m = M.LatticeModel(2, ((0, np.kron(SX, SX) + 0.3 * np.kron(SZ, I2)),), ((0, 0 * SZ), (1, 0 * SZ)),
                       "markovian")
    est = S.unraveled_channel(m, 1.0, 1 / 16, 4, 0)
    assert channel_distance(est.channel, TR.closed_reference(m, 1.0)) < 1e-12
    assert np.max(est.stderr) < 1e-12


def test_dephasing_qubit_coherence():
    t = 1.0
    est = S.unraveled_channel(M.builtin("dephasing_qubit"), t, 1 / 16, 10_000, 3)
    coh = est.channel.apply(PLUS)[0, 1]
    assert abs(coh - 0.5 * math.exp(-2 * t)) < 3 * 0.5 * est.stderr[2, 2]


def test_unraveled_channel_trace_preserving():
    est = S.unraveled_channel(M.builtin("xx_dephasing2"), 0.5, 1 / 16, 200, 0)
    assert est.channel.trace_defect() < 1e-10


def test_stderr_scales_as_inverse_sqrt_samples():
    m = M.builtin("xx_dephasing2")
    a = S.unraveled_channel(m, 0.5, 1 / 16, 1000, 1)
    b = S.unraveled_channel(m, 0.5, 1 / 16, 4000, 1)
    assert 1.7 <= np.max(a.stderr) / np.max(b.stderr) <= 2.3


def test_estimate_close_to_exact_liouvillian():
    m = M.builtin("xx_dephasing2")
    est = S.unraveled_channel(m, 0.5, 1 / 64, 2000, 2)
    exact = L.exact_propagator(L.liouvillian(m), 0.5)
    # common-random-number path budget for this model at eps = 1/64 is about 0.0025
    assert channel_distance(est.channel, exact) < 3 * est.distance_noise + 0.01


def test_common_random_number_refinement_decreases():
    m = M.builtin("xx_dephasing2")
    psi0 = np.zeros(4, dtype=complex)
    psi0[1] = 1
    seeds = list(range(40))
    gaps = []
    for eps in (1 / 16, 1 / 64, 1 / 256):
        fine = S.trajectory_states(m, 1.0, eps, seeds, psi0, stride=1)
        coarse = S.trajectory_states(m, 1.0, eps, seeds, psi0, stride=2)
        gaps.append(float(np.mean(np.linalg.norm(fine - coarse, axis=1))))
    assert gaps[0] > gaps[1] > gaps[2]


def test_parallel_result_bit_identical():
    m = M.builtin("xx_dephasing2")
    a = S.unraveled_channel(m, 0.5, 1 / 16, 1024, 7, jobs=1)
    b = S.unraveled_channel(m, 0.5, 1 / 16, 1024, 7, jobs=2)
    assert np.array_equal(a.channel.superop, b.channel.superop) and np.array_equal(a.stderr, b.stderr)


# --- regularity -------------------------------------------------------------------


def test_holder_ramp_is_lipschitz():
    grid = np.arange(2**11 + 1) / 2**11
    assert S.holder_exponent(S.WienerPath(grid, grid[None, :], None)) == pytest.approx(1.0, abs=1e-9)


def test_holder_wiener_sample():
    h = S.holder_exponent(S.sample_wiener(1, 1.0, 2.0**-14, 1))
    assert 0.3 <= h <= 0.6


def test_holder_constant_path_flat():
    grid = np.arange(2**10) / 2**10
    assert S.holder_exponent(S.WienerPath(grid, np.zeros((1, grid.size)), None)) == S.FLAT


def test_holder_short_path_rejected():
    with pytest.raises(ValueError):
        S.holder_exponent(S.sample_wiener(1, 1.0, 1 / 64, 0))
