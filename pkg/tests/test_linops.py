import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opensim.linops import (
    SX, SY, SZ, Channel, channel_distance, channel_from_dilation, dephasing_channel,
    depolarizing_channel, expm_hermitian, kron, partial_trace, random_density,
    random_unitary, trace_norm, vec, unvec,
)

seeds = st.integers(min_value=0, max_value=2**31 - 1)


def rand_herm(D, rng):
    A = rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D))
    return (A + A.conj().T) / 2


# expm_hermitian

def test_expm_zero_generator_is_identity():
    assert np.allclose(expm_hermitian(np.zeros((5, 5)), 7.3), np.eye(5), atol=1e-14)


def test_expm_sigma_z_diagonal():
    t = 0.37
    assert np.allclose(expm_hermitian(SZ, t), np.diag([np.exp(-1j * t), np.exp(1j * t)]), atol=1e-14)


def test_expm_sigma_x_quarter_turn():
    assert np.allclose(expm_hermitian(SX, np.pi / 2), -1j * SX, atol=1e-14)


def test_expm_rejects_non_hermitian():
    with pytest.raises(ValueError, match="not Hermitian"):
        expm_hermitian(np.array([[0, 1], [0, 0]]), 1.0)


@settings(max_examples=30, deadline=None)
@given(seeds, st.floats(-3, 3), st.floats(-3, 3))
def test_expm_group_law(seed, t1, t2):
    rng = np.random.default_rng(seed)
    H = rand_herm(4, rng)
    lhs = expm_hermitian(H, t1) @ expm_hermitian(H, t2)
    assert np.max(np.abs(lhs - expm_hermitian(H, t1 + t2))) < 1e-10


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_expm_is_unitary(seed):
    rng = np.random.default_rng(seed)
    U = expm_hermitian(rand_herm(6, rng), rng.normal())
    assert np.max(np.abs(U.conj().T @ U - np.eye(6))) < 1e-10


# partial_trace

def test_partial_trace_product_state():
    rng = np.random.default_rng(1)
    ra, rb = random_density(2, rng), random_density(3, rng)
    assert np.allclose(partial_trace(np.kron(ra, rb), [2, 3], [0]), ra, atol=1e-14)


@pytest.mark.parametrize("keep", [0, 1])
def test_partial_trace_bell_state(keep):
    phi = np.array([1, 0, 0, 1]) / np.sqrt(2)
    assert np.allclose(partial_trace(np.outer(phi, phi), [2, 2], [keep]), np.eye(2) / 2)


def test_partial_trace_against_index_sum():
    rng = np.random.default_rng(2)
    rho = random_density(6, rng)
    T = rho.reshape(2, 3, 2, 3)
    oracle_a = sum(T[:, k, :, k] for k in range(3))
    oracle_b = sum(T[k, :, k, :] for k in range(2))
    assert np.allclose(partial_trace(rho, [2, 3], [0]), oracle_a, atol=1e-14)
    assert np.allclose(partial_trace(rho, [2, 3], [1]), oracle_b, atol=1e-14)
    assert abs(np.trace(partial_trace(rho, [2, 3], [1])) - 1) < 1e-12


def test_partial_trace_three_factors_middle():
    rng = np.random.default_rng(3)
    a, b, c = random_density(2, rng), random_density(3, rng), random_density(2, rng)
    assert np.allclose(partial_trace(kron(a, b, c), [2, 3, 2], [0, 2]), np.kron(a, c), atol=1e-13)


def test_partial_trace_bad_index():
    with pytest.raises(IndexError):
        partial_trace(np.eye(4), [2, 2], [2])


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_partial_trace_of_tensor_product(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    B = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    assert np.max(np.abs(partial_trace(np.kron(A, B), [2, 3], [0]) - np.trace(B) * A)) < 1e-12


# trace_norm

def test_trace_norm_identity():
    assert trace_norm(np.eye(5)) == pytest.approx(5)


def test_trace_norm_diagonal():
    assert trace_norm(np.diag([3.0, -4.0])) == pytest.approx(7)


def test_trace_norm_matches_eigen_oracle():
    rng = np.random.default_rng(4)
    A = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    oracle = np.sum(np.sqrt(np.clip(np.linalg.eigvalsh(A.conj().T @ A), 0, None)))
    assert abs(trace_norm(A) - oracle) < 1e-10


# channels

def test_vectorization_is_column_stacking():
    A = np.array([[1, 2], [3, 4]])
    assert list(vec(A)) == [1, 3, 2, 4]
    assert np.array_equal(unvec(vec(A)), A)


def test_superop_consistency_with_trace_pairing():
    rng = np.random.default_rng(5)
    U = random_unitary(3, rng)
    E = Channel.from_unitary(U)
    rho, A = random_density(3, rng), rng.normal(size=(3, 3))
    assert abs(np.trace(A.conj().T @ E.apply(rho)) - np.trace(A.conj().T @ U @ rho @ U.conj().T)) < 1e-12


def test_dilation_identity():
    E = channel_from_dilation(np.eye(4), [2], [2], np.diag([1.0, 0.0]))
    assert np.allclose(E.superop, np.eye(4))


def test_dilation_swap_is_constant_channel():
    swap = np.eye(4)[[0, 2, 1, 3]]
    E = channel_from_dilation(swap, [2], [2], np.diag([1.0, 0.0]))
    rho = random_density(2, np.random.default_rng(6))
    assert np.allclose(E.apply(rho), np.diag([1.0, 0.0]), atol=1e-14)


def test_dilation_cnot_is_full_dephasing():
    cnot = np.eye(4)[[0, 1, 3, 2]]
    E = channel_from_dilation(cnot, [2], [2], np.diag([1.0, 0.0]))
    # Pauli-basis action of complete Z dephasing: I, Z kept; X, Y killed
    for P, keep in [(np.eye(2), 1), (SZ, 1), (SX, 0), (SY, 0)]:
        assert np.allclose(E.apply(P), keep * P, atol=1e-14)


def test_dilation_rejects_unnormalized_env():
    with pytest.raises(ValueError):
        channel_from_dilation(np.eye(4), [2], [2], np.diag([1.0, 0.5]))


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_dilation_outputs_are_states(seed):
    rng = np.random.default_rng(seed)
    E = channel_from_dilation(random_unitary(6, rng), [2], [3], random_density(3, rng))
    for _ in range(5):
        out = E.apply(random_density(2, rng))
        assert abs(np.trace(out) - 1) < 1e-10
        assert np.min(np.linalg.eigvalsh((out + out.conj().T) / 2)) >= -1e-10


def test_distance_to_self_is_zero():
    E = Channel.from_unitary(random_unitary(2, np.random.default_rng(7)))
    assert channel_distance(E, E) < 1e-14


def test_distance_identity_vs_depolarizing():
    assert channel_distance(Channel.identity([2]), depolarizing_channel(2, 1.0)) == pytest.approx(1.5, abs=1e-12)


@pytest.mark.parametrize("p", [0.0, 0.1, 0.5, 1.0])
def test_distance_identity_vs_dephasing(p):
    assert channel_distance(Channel.identity([2]), dephasing_channel(p)) == pytest.approx(p, abs=1e-12)


def test_distance_rejects_dim_mismatch():
    with pytest.raises(ValueError):
        channel_distance(Channel.identity([2]), Channel.identity([3]))


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_distance_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    Es = [channel_from_dilation(random_unitary(4, rng), [2], [2], random_density(2, rng)) for _ in range(3)]
    d01, d12, d02 = (channel_distance(Es[0], Es[1]), channel_distance(Es[1], Es[2]),
                     channel_distance(Es[0], Es[2]))
    assert d02 <= d01 + d12 + 1e-10


def test_exact_channel_is_cp_and_tp():
    rng = np.random.default_rng(8)
    E = channel_from_dilation(random_unitary(8, rng), [2], [4], random_density(4, rng))
    assert E.trace_defect() < 1e-10
    assert E.min_choi_eigenvalue() >= -1e-10
