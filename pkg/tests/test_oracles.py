import itertools
import math

import numpy as np
import pytest
import scipy.sparse.linalg as spla

from stripsim.bath import BathSpec
from stripsim.emitters import EmitterConfig, encode_initial_state
from stripsim.oracles import (
    LindbladModel,
    OracleError,
    build_fock_sector,
    calibrate_eta,
    exact_single_excitation,
    exact_small_system,
    lindbladian,
    markov_lindblad,
    markov_rates,
    single_excitation_hamiltonian,
    small_system_dimension,
)

DIAG2 = EmitterConfig("diagonal", 2, -1.0, 0.3)


def test_single_excitation_hamiltonian_hermitian_and_norm():
    h = single_excitation_hamiltonian(BathSpec(9), DIAG2)
    assert abs(h - h.T.conj()).max() == 0
    init = encode_initial_state("symmetric-single-excitation", DIAG2)
    s = exact_single_excitation(DIAG2, BathSpec(9), init, np.linspace(0, 40, 41))
    assert np.abs(s.norm - 1).max() < 1e-12
    assert s.C[0] == pytest.approx(1.0)


def test_single_excitation_dense_and_krylov_agree():
    init = encode_initial_state("symmetric-single-excitation", DIAG2)
    ts = np.linspace(0, 12, 13)
    a = exact_single_excitation(DIAG2, BathSpec(11), init, ts)
    b = exact_single_excitation(DIAG2, BathSpec(11), init, ts, dense_max=10)
    assert np.abs(a.C - b.C).max() < 1e-10


def test_decoupled_and_off_resonant():
    init = encode_initial_state("symmetric-single-excitation", EmitterConfig("single", 1, -1.0, 0.0))
    s = exact_single_excitation(EmitterConfig("single", 1, -1.0, 0.0), BathSpec(7), init, [0.0, 5.0, 50.0])
    assert np.allclose(s.C, 1.0)
    far = EmitterConfig("single", 1, -8.0, 0.05)
    s = exact_single_excitation(far, BathSpec(15), init, np.linspace(0, 100, 11))
    # perturbatively 1 - C ~ g^2 / (distance to band edge)^2
    assert s.C.min() > 1 - 4 * 0.05**2 / 4.0**2


def test_requires_single_excitation():
    with pytest.raises(OracleError):
        exact_single_excitation(DIAG2, BathSpec(5), encode_initial_state("all-excited", DIAG2), [0.0])


def _brute_dimension(n_em, n_sites, n_exc, cap):
    count = 0
    for em in itertools.product((0, 1), repeat=n_em):
        rest = n_exc - sum(em)
        if rest < 0:
            continue
        count += sum(1 for occ in itertools.combinations_with_replacement(range(n_sites), rest)
                     if all(occ.count(s) <= cap for s in set(occ)))
    return count


def test_small_system_dimension_frozen():
    assert small_system_dimension(2, 25, 2, 2) == 376
    assert _brute_dimension(2, 25, 2, 2) == 376
    for args in ((2, 9, 2, 1), (4, 9, 3, 2), (2, 25, 2, 1)):
        assert small_system_dimension(*args) == _brute_dimension(*args)
    sec = build_fock_sector(BathSpec(5), DIAG2, 2)
    assert len(sec.states) == 376
    assert abs(sec.hamiltonian - sec.hamiltonian.T).max() == 0


def test_small_system_matches_single_excitation_and_reverses():
    init = encode_initial_state("symmetric-single-excitation", DIAG2)
    ts = np.linspace(0, 10, 11)
    a = exact_single_excitation(DIAG2, BathSpec(5), init, ts)
    b = exact_small_system(DIAG2, BathSpec(5), init, ts)
    assert np.abs(a.C - b.C).max() < 1e-12
    sec = build_fock_sector(BathSpec(5), DIAG2, 2)
    rng = np.random.default_rng(0)
    psi = rng.normal(size=sec.hamiltonian.shape[0]) + 0j
    psi /= np.linalg.norm(psi)
    fwd = spla.expm_multiply(-1j * 7.0 * sec.hamiltonian, psi)
    back = spla.expm_multiply(1j * 7.0 * sec.hamiltonian, fwd)
    assert np.linalg.norm(back - psi) < 1e-9


def test_small_system_t0():
    init = encode_initial_state("all-excited", DIAG2)
    s = exact_small_system(DIAG2, BathSpec(5), init, [0.0])
    assert s.C[0] == pytest.approx(2.0, abs=1e-14) and s.C1[0] == pytest.approx(1.0, abs=1e-14)
    assert s.total_excitations[0] == pytest.approx(2.0)


def test_markov_single_emitter_exponential():
    single = EmitterConfig("single", 1, -3.95, 0.05)
    init = encode_initial_state("symmetric-single-excitation", single)
    ts = np.linspace(0, 300, 7)
    model = markov_rates(single, BathSpec(41), 0.1)
    s = markov_lindblad(single, BathSpec(41), init, ts, 0.1)
    assert np.allclose(s.C, np.exp(-model.gamma[0, 0] * ts), rtol=1e-9)


def test_dicke_superradiant_burst():
    cfg = EmitterConfig("diagonal", 6, 0.0, 0.1)
    pos = [(1, 1), (-1, -1), (3, 3), (-3, -3), (5, 5), (-5, -5)]
    gamma = 0.01
    d = 2**6
    rho0 = np.zeros((d, d))
    rho0[-1, -1] = 1
    ts = np.linspace(0, 60, 31)
    counts = np.array([bin(b).count("1") for b in range(d)])
    curves = {}
    for name, g in (("dicke", np.ones((6, 6))), ("indep", np.eye(6))):
        lv = lindbladian(cfg, LindbladModel(gamma * g, np.zeros((6, 6)), 0.1, pos))
        rhos = spla.expm_multiply(lv, rho0.reshape(-1).astype(complex), start=0, stop=60, num=31, endpoint=True)
        curves[name] = np.array([np.real(np.diag(r.reshape(d, d))) @ counts for r in rhos])
        final = rhos[-1].reshape(d, d)
        assert abs(np.trace(final) - 1) < 1e-10
        assert np.linalg.eigvalsh((final + final.conj().T) / 2).min() > -1e-9
    # collective emission rate peaks after t = 0 (burst); independent decay is a plain exponential
    assert (-np.diff(curves["dicke"])).argmax() > 0
    assert (-np.diff(curves["indep"])).argmax() == 0
    assert np.all(curves["dicke"][1:] < curves["indep"][1:])
    assert np.allclose(curves["indep"], 6 * np.exp(-gamma * ts))


def test_rates_psd_and_eta_guard():
    cfg = EmitterConfig("diagonal", 6, -3.95, 0.05)
    model = markov_rates(cfg, BathSpec(41), 0.1)
    assert np.linalg.eigvalsh(model.gamma).min() > -1e-12
    with pytest.raises(OracleError):
        markov_rates(cfg, BathSpec(41), 0.0)


def test_calibration_reproduces_slope():
    eta, slope, gamma = calibrate_eta(EmitterConfig("diagonal", 2, -3.95, 0.05), BathSpec(51))
    assert eta > 0 and slope > 0
    assert abs(gamma - slope) < 0.1 * slope
