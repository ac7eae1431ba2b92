import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opensim import model as M
from opensim.envdisc import smooth_cutoff
from opensim.linops import SX, SZ, I2


def _gauss_unit_cut8():
    return M.gaussian_coupling(1.0, 1.0, cut=8.0)


def test_vacuum_kernel_gaussian_closed_form_at_zero():
    # int e^{-u^2} e^{-(u - tau)^2} du = sqrt(pi/2) e^{-tau^2/2}
    v = _gauss_unit_cut8()
    assert abs(M.vacuum_kernel_value(v, 0.0) - math.sqrt(math.pi / 2)) < 1e-8


def test_vacuum_kernel_gaussian_closed_form_at_two():
    v = _gauss_unit_cut8()
    assert abs(M.vacuum_kernel_value(v, 2.0) - math.sqrt(math.pi / 2) * math.exp(-2)) < 1e-8


def test_zero_coupling_gives_zero_kernel():
    v = M.CouplingFunction(lambda t: np.zeros_like(t), 2.0, 0.0)
    K = M.vacuum_kernel_from_coupling(v, np.linspace(-3, 3, 7))
    assert np.all(K.values == 0)
    assert K.l_inf == 0 and K.l_one == 0


def test_noncompact_coupling_rejected():
    with pytest.raises(ValueError, match="smooth_cutoff"):
        M.vacuum_kernel_value(M.gaussian_coupling(), 0.0)


def test_unsorted_grid_rejected():
    with pytest.raises(ValueError):
        M.vacuum_kernel_from_coupling(_gauss_unit_cut8(), [1.0, 0.0])


def test_kernel_l_inf_and_l_one_bound_grid_values():
    K = M.vacuum_kernel_from_coupling(_gauss_unit_cut8(), np.linspace(-5, 5, 101))
    assert np.all(np.abs(K.values) <= K.l_inf)
    # trapezoid of |K| over [-5, 5]; closed-form integral of sqrt(pi/2) e^{-tau^2/2} is pi
    assert K.l_one <= math.pi * (1 + 1e-6) + 1e-3


def test_kernel_hermitian_symmetry_and_peak_for_complex_coupling():
    v = smooth_cutoff(M.CouplingFunction(lambda t: np.exp(-t * t + 0.7j * t), math.inf, 1.0), 1.0, 0.5)
    K0 = M.vacuum_kernel_value(v, 0.0)
    for tau in (0.3, 0.9, 1.7):
        Kp, Km = M.vacuum_kernel_value(v, tau), M.vacuum_kernel_value(v, -tau)
        assert abs(Km - np.conj(Kp)) < 1e-8
        assert abs(Kp) <= abs(K0) + 1e-10


@settings(max_examples=15, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-1.5, 1.5))
def test_kernel_scales_with_modulus_squared(re, im, tau):
    v = smooth_cutoff(M.gaussian_coupling(1.0, 0.5), 0.5, 0.25)
    c = complex(re, im)
    assert abs(M.vacuum_kernel_value(v.scaled(c), tau) - abs(c) ** 2 * M.vacuum_kernel_value(v, tau)) \
        < 1e-9 * max(1.0, abs(c) ** 2)


def test_coupling_bounded_by_c0_and_zero_outside_support():
    v = smooth_cutoff(M.gaussian_coupling(0.8, 0.5), 1.0, 0.5)
    t = np.linspace(-3, 3, 601)
    vals = v(t)
    assert np.all(np.abs(vals) <= v.c0 + 1e-15)
    assert np.all(vals[np.abs(t) > v.support_radius] == 0)


def test_tfim_sigmaz_validates_with_zero_commutator_defects():
    rep = M.validate_model(M.tfim_sigmaz(4), markovian_commuting=True)
    assert rep.ok
    assert rep.commutator_defect == 0 and rep.commutator_dagger_defect == 0


def test_overlapping_noncommuting_jumps_reported():
    # [XX (x) I, I (x) ZZ] = X (x) [X, Z] (x) Z has spectral norm ||[X, Z]|| = 2
    m = M.LatticeModel(3, (), ((0, np.kron(SX, SX)), (1, np.kron(SZ, SZ))), "markovian")
    rep = M.validate_model(m, markovian_commuting=True)
    assert abs(rep.commutator_defect - 2.0) < 1e-12
    assert not rep.ok


def test_norm_violation_listed():
    m = M.LatticeModel(2, ((0, 1.5 * np.kron(SZ, SZ)),), (), "markovian")
    rep = M.validate_model(m)
    assert len(rep.norm_violations) == 1 and "1.5" in rep.norm_violations[0]


def test_non_hermitian_h_term_listed():
    m = M.LatticeModel(2, ((0, np.kron(M.SM, I2)),), (), "markovian")
    assert M.validate_model(m).hermiticity_violations


def test_term_leaving_chain_rejected():
    with pytest.raises(ValueError):
        M.LatticeModel(2, ((1, np.kron(SZ, SZ)),), (), "markovian")


def test_nonmarkovian_model_needs_one_coupling_per_bond():
    v = smooth_cutoff(M.gaussian_coupling(), 0.5)
    with pytest.raises(ValueError):
        M.LatticeModel(3, (), ((0, SZ),), (v,))


def test_builtins_validate_and_include_expected_names():
    names = M.list_builtins()
    assert "tfim3_sigmaz" in names and len(names) >= 4
    for name in names:
        assert M.validate_model(M.builtin(name)).ok, name


def test_unknown_builtin_rejected():
    with pytest.raises(KeyError):
        M.builtin("nope")


def test_json_round_trip(tmp_path):
    m = M.builtin("xx_dephasing2")
    p = tmp_path / "m.json"
    p.write_text(json.dumps(M.model_to_dict(m)))
    back = M.load_model(p)
    assert back.n_sites == 2 and back.markovian
    assert np.array_equal(back.hamiltonian(), m.hamiltonian())
    for (s1, a), (s2, b) in zip(back.j_terms, m.j_terms):
        assert s1 == s2 and np.array_equal(a, b)


def test_json_gaussian_coupling_with_cutoff():
    doc = {"n_sites": 2, "h_terms": [], "j_terms": [{"site": 0, "matrix": [[[1, 0], [0, 0]], [[0, 0], [-1, 0]]]}],
           "coupling": {"kind": "gaussian", "params": {"g": 1.0, "sigma": 0.5, "t_star": 1.0, "width": 0.5}}}
    m = M.model_from_dict(doc)
    assert not m.markovian and m.coupling[0].support_radius == 2.0


def test_bond_hamiltonians_sum_to_hamiltonian():
    m = M.builtin("tfim4")
    assert np.allclose(sum(m.bond_hamiltonians()), m.hamiltonian(), atol=1e-14)
