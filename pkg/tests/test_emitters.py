import math

import numpy as np
import pytest

from stripsim.bath import BathSpec, SymmetryAxes, build_bath, decompose_symmetry
from stripsim.emitters import (
    EmitterConfig,
    SymmetryError,
    bound_state_target,
    build_interaction,
    encode_initial_state,
    pair_operators,
    pair_to_product_basis,
)


def _e(i):
    v = np.zeros(4)
    v[i] = 1
    return v


def test_pair_operator_action():
    ops = pair_operators()
    o1, o2, pi = ops["O1"], ops["O2"], ops["Pi"]
    assert np.array_equal(o1 @ _e(0), _e(1)) and np.array_equal(o1 @ _e(1), _e(3))
    assert np.array_equal(o1 @ _e(2), np.zeros(4))
    assert np.array_equal(o2 @ _e(0), _e(2)) and np.array_equal(o2 @ _e(2), -_e(3))
    assert np.array_equal(np.diag(pi), [0, 1, 1, 2])


def test_pair_basis_is_collective_spin_basis():
    # O1 = (s_a^+ + s_b^+)/sqrt2, O2 = (s_a^+ - s_b^+)/sqrt2 in the product basis
    m = pair_to_product_basis()
    sp = np.array([[0, 0], [1, 0]])
    sa, sb = np.kron(sp, np.eye(2)), np.kron(np.eye(2), sp)
    ops = pair_operators()
    assert np.allclose(m @ ops["O1"] @ m.T, (sa + sb) / math.sqrt(2))
    assert np.allclose(m @ ops["O2"] @ m.T, (sa - sb) / math.sqrt(2))
    assert np.allclose(m.T @ m, np.eye(4))


def test_config_validation():
    for args in (("diagonal", 3), ("diagonal", 0), ("diamond", 2), ("single", 2), ("ring", 2)):
        with pytest.raises(ValueError):
            EmitterConfig(args[0], args[1], 0.0, 0.1)
    with pytest.raises(ValueError):
        EmitterConfig("diagonal", 2, math.inf, 0.1)


def test_positions():
    em = EmitterConfig("diagonal", 6, -1.0, 0.1)
    assert [s.members for s in em.effective_sites()] == [((1, 1), (-1, -1)), ((3, 3), (-3, -3)), ((5, 5), (-5, -5))]
    assert set(EmitterConfig("diamond", 4, 0.0, 0.1).positions()) == {(2, 0), (-2, 0), (0, 2), (0, -2)}


def _records(kind, n_e, L=11):
    em = EmitterConfig(kind, n_e, -1.0, 0.1)
    spec = BathSpec(L)
    return build_interaction(em, decompose_symmetry(build_bath(spec), spec, em.axes))


def test_interaction_records():
    r2 = _records("diagonal", 2)
    assert len(r2) == 2 and {r.sector for r in r2} == {"++", "+-"}
    dia = _records("diamond", 4)
    assert len(dia) == 4 and {r.sector for r in dia} == {"++", "+-", "-+"}
    assert sum(r.sector == "++" for r in dia) == 2
    r6 = _records("diagonal", 6, L=13)
    assert len(r6) == 6
    assert all(sum(r.sector == s for r in r6) == 3 for s in ("++", "+-"))
    # each collective operator couples with strength g to its sector mode
    assert all(abs(abs(r.strength) - 0.1) < 1e-14 for r in r2)


def test_wrong_axes_and_oversized():
    em = EmitterConfig("diamond", 4, 0.0, 0.1)
    spec = BathSpec(5)
    with pytest.raises(SymmetryError):
        build_interaction(em, decompose_symmetry(build_bath(spec), spec, SymmetryAxes("diagonal")))
    em6 = EmitterConfig("diagonal", 6, 0.0, 0.1)
    with pytest.raises(SymmetryError):
        build_interaction(em6, decompose_symmetry(build_bath(spec), spec, em6.axes))


def test_initial_states():
    em4 = EmitterConfig("diagonal", 4, -1.0, 0.1)
    s = encode_initial_state("all-excited", em4)
    assert s.excitations == 4 and np.allclose(s.vector(), np.kron(_e(3), _e(3)))
    em2 = EmitterConfig("diagonal", 2, -1.0, 0.1)
    assert np.allclose(encode_initial_state("symmetric-single-excitation", em2).vector(), _e(1))
    sym = encode_initial_state("symmetric-single-excitation", EmitterConfig("diagonal", 6, -1.0, 0.1)).vector()
    assert np.linalg.norm(sym) == pytest.approx(1.0)
    dia = EmitterConfig("diamond", 4, 0.0, 0.05)
    pm = encode_initial_state("phi-minus", dia)
    pp = encode_initial_state("phi-plus", dia)
    assert pm.excitations == 3 and abs(np.vdot(pm.vector(), pp.vector())) < 1e-15
    assert abs(np.vdot(bound_state_target(dia), pm.vector())) == 0
    with pytest.raises(ValueError):
        encode_initial_state("phi-minus", em2)
    with pytest.raises(ValueError):
        encode_initial_state("thermal", em2)
    cust = encode_initial_state("custom-product", em4, [[0, 1, 0, 0], [0, 0, 0, 2]])
    assert cust.excitations == 3


def test_phi_minus_in_individual_basis():
    from stripsim.oracles import individual_state

    dia = EmitterConfig("diamond", 4, 0.0, 0.05)
    v = individual_state(dia, encode_initial_state("phi-minus", dia).vector())
    assert np.linalg.norm(v) == pytest.approx(1.0)
    counts = np.array([bin(i).count("1") for i in range(16)])
    assert np.all(counts[np.abs(v) > 1e-14] == 3)
