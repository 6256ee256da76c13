"""Reference computations on the untransformed lattice model.

* ``exact_single_excitation``: amplitudes over emitters + lattice sites.
* ``exact_small_system``: fixed-excitation Fock space (hard-core emitters,
  capped bosons), for tiny lattices.
* ``markov_lindblad``: golden-rule master equation for the emitters alone;
  a heuristic comparator, cross-calibrated against the exact decay.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bath import BathSpec, build_bath, lattice_momenta, dispersion
from .emitters import EmitterConfig, InitialState, bound_state_target, pair_to_product_basis

log = logging.getLogger(__name__)

DENSE_MAX = 2500  # single-excitation dimension up to which a full eigendecomposition is used
SMALL_SYSTEM_MAX = 200_000


class OracleError(ValueError):
    pass


@dataclass
class Series:
    """Time series in the measurement schema (oracle columns that do not apply are fixed)."""

    t: np.ndarray
    C: np.ndarray
    C1: np.ndarray
    fidelity: np.ndarray
    norm: np.ndarray
    total_excitations: np.ndarray

    def rows(self):
        for k in range(self.t.size):
            yield (
                float(self.t[k]),
                float(self.C[k]),
                float(self.C1[k]),
                float(self.fidelity[k]),
                float(self.norm[k]),
                float(self.total_excitations[k]),
                0,
                0.0,
            )


def emitter_order(config: EmitterConfig) -> list[tuple[int, int]]:
    """Individual emitters, ordered by effective site then member (larger member first)."""
    return [p for s in config.effective_sites() for p in s.members]


def individual_state(config: EmitterConfig, vec: np.ndarray) -> np.ndarray:
    """Effective-site state vector -> product basis of individual two-level emitters.

    Each emitter is ``(|g>, |e>)``; tensor order follows ``emitter_order``.
    """
    m = np.array([[1.0]])
    for s in config.effective_sites():
        m = np.kron(m, pair_to_product_basis() if s.size == 2 else np.eye(2))
    return m @ np.asarray(vec)


def _excitation_counts(n: int) -> np.ndarray:
    idx = np.arange(2**n)
    return np.array([bin(i).count("1") for i in idx])


def _single_excitation_amplitudes(config: EmitterConfig, vec: np.ndarray) -> np.ndarray:
    full = individual_state(config, vec)
    n = len(emitter_order(config))
    counts = _excitation_counts(n)
    if np.linalg.norm(full[counts != 1]) > 1e-12:
        raise OracleError("exact_single_excitation needs an initial state with exactly one excitation")
    # basis index with a single 1 at emitter position p (first factor is the most significant bit)
    return np.array([full[1 << (n - 1 - p)] for p in range(n)])


def single_excitation_hamiltonian(spec: BathSpec, config: EmitterConfig) -> sp.csr_matrix:
    pos = emitter_order(config)
    ne = len(pos)
    hb = build_bath(spec).tocoo()
    rows = list(hb.row + ne)
    cols = list(hb.col + ne)
    vals = list(hb.data)
    for e, (x, y) in enumerate(pos):
        rows += [e, e, ne + spec.index(x, y)]
        cols += [e, ne + spec.index(x, y), e]
        vals += [config.omega, config.g, config.g]
    n = ne + spec.n_sites
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _propagate(h, psi0: np.ndarray, times: np.ndarray, dense_max: int) -> np.ndarray:
    """States at ``times`` (rows).  Dense eigenbasis when small, else scipy's Taylor expm_multiply."""
    times = np.asarray(times, dtype=float)
    if h.shape[0] <= dense_max:
        hd = h.toarray() if sp.issparse(h) else np.asarray(h)
        w, v = np.linalg.eigh(hd)
        c = v.conj().T @ psi0
        return (v @ (np.exp(-1j * np.outer(w, times)) * c[:, None])).T
    out = np.empty((times.size, psi0.size), dtype=complex)
    steps = np.diff(times)
    uniform = times.size > 2 and np.allclose(steps, steps[0], rtol=1e-12, atol=1e-12)
    if uniform:
        out[:] = spla.expm_multiply(-1j * h, psi0.astype(complex), start=times[0], stop=times[-1],
                                    num=times.size, endpoint=True)
        return out
    psi, t_prev = psi0.astype(complex), 0.0
    for k, t in enumerate(times):
        if t != t_prev:
            psi = spla.expm_multiply(-1j * (t - t_prev) * h, psi)
        out[k] = psi
        t_prev = t
    return out


def exact_single_excitation(
    config: EmitterConfig,
    spec: BathSpec,
    initial: InitialState,
    times,
    dense_max: int = DENSE_MAX,
) -> Series:
    """Single-excitation dynamics on the full lattice (no symmetry reduction, no mapping)."""
    amps = _single_excitation_amplitudes(config, initial.vector())
    h = single_excitation_hamiltonian(spec, config)
    ne = amps.size
    psi0 = np.zeros(h.shape[0], dtype=complex)
    psi0[:ne] = amps
    states = _propagate(h, psi0, np.asarray(times, dtype=float), dense_max)
    pe = np.abs(states[:, :ne]) ** 2
    size1 = config.effective_sites()[0].size
    target = bound_state_target(config)
    if target is not None:
        tamp = _single_excitation_amplitudes(config, target)
        fid = np.abs(states[:, :ne] @ tamp.conj()) ** 2
    else:
        fid = np.full(len(times), math.nan)
    norm = np.linalg.norm(states, axis=1)
    return Series(np.asarray(times, float), pe.sum(axis=1), pe[:, :size1].sum(axis=1) / size1,
                  fid, norm, norm**2)


# ---------------------------------------------------------------- fixed-N Fock space


def _bath_configs(n_sites: int, n: int, cap: int):
    """Occupation tuples (as sorted multisets of site indices) with at most ``cap`` per site."""
    for combo in itertools.combinations_with_replacement(range(n_sites), n):
        if cap >= n or max((combo.count(s) for s in set(combo)), default=0) <= cap:
            yield combo


def small_system_dimension(n_emitters: int, n_sites: int, n_exc: int, cap: int) -> int:
    """Number of Fock states with ``n_exc`` excitations: hard-core emitters, bosons capped at ``cap``."""
    def bosons(m):
        # coefficient of x^m in (1 + x + ... + x^cap)^n_sites
        poly = np.zeros(m + 1, dtype=object)
        poly[0] = 1
        for _ in range(n_sites):
            new = np.zeros(m + 1, dtype=object)
            for k in range(min(cap, m) + 1):
                new[k:] += poly[: m + 1 - k]
            poly = new
        return int(poly[m])

    return sum(math.comb(n_emitters, k) * bosons(n_exc - k) for k in range(min(n_emitters, n_exc) + 1))


@dataclass
class FockSector:
    states: list[tuple[tuple[int, ...], tuple[int, ...]]]  # (excited emitters, boson multiset)
    index: dict
    hamiltonian: sp.csr_matrix
    n_exc: int


def build_fock_sector(spec: BathSpec, config: EmitterConfig, n_exc: int, cap: int | None = None) -> FockSector:
    cap = n_exc if cap is None else cap
    pos = emitter_order(config)
    ne, ns = len(pos), spec.n_sites
    dim = small_system_dimension(ne, ns, n_exc, cap)
    if dim > SMALL_SYSTEM_MAX:
        raise OracleError(f"fixed-excitation sector has dimension {dim} > {SMALL_SYSTEM_MAX}")
    states = []
    for k in range(min(ne, n_exc) + 1):
        for em in itertools.combinations(range(ne), k):
            for bos in _bath_configs(ns, n_exc - k, cap):
                states.append((em, bos))
    index = {s: i for i, s in enumerate(states)}
    hb = build_bath(spec).tocoo()
    nbrs: dict[int, list[tuple[int, float]]] = {}
    for r, c, v in zip(hb.row, hb.col, hb.data):
        nbrs.setdefault(int(c), []).append((int(r), float(v)))
    site_of = [spec.index(x, y) for x, y in pos]
    rows, cols, vals = [], [], []
    for i, (em, bos) in enumerate(states):
        rows.append(i)
        cols.append(i)
        vals.append(config.omega * len(em))
        occ: dict[int, int] = {}
        for s in bos:
            occ[s] = occ.get(s, 0) + 1
        # hopping a_r^dag a_c
        for c, nc in occ.items():
            for r, v in nbrs.get(c, ()):
                if occ.get(r, 0) >= cap:
                    continue
                new = list(bos)
                new.remove(c)
                new.append(r)
                j = index[(em, tuple(sorted(new)))]
                amp = v * math.sqrt(nc) * math.sqrt(occ.get(r, 0) + 1)
                rows.append(j)
                cols.append(i)
                vals.append(amp)
        # g (s^+ a + s^- a^dag): lower emitter e, create boson at its site (and the reverse via symmetry)
        for e in em:
            s = site_of[e]
            if occ.get(s, 0) >= cap:
                continue
            new_em = tuple(x for x in em if x != e)
            j = index[(new_em, tuple(sorted(bos + (s,))))]
            amp = config.g * math.sqrt(occ.get(s, 0) + 1)
            rows += [j, i]
            cols += [i, j]
            vals += [amp, amp]
    h = sp.csr_matrix((vals, (rows, cols)), shape=(len(states), len(states)))
    return FockSector(states, index, h, n_exc)


def exact_small_system(
    config: EmitterConfig,
    spec: BathSpec,
    initial: InitialState,
    times,
    cap: int | None = None,
    dense_max: int = 4000,
) -> Series:
    """Fixed-excitation evolution of the full lattice model for tiny systems."""
    full = individual_state(config, initial.vector())
    ne = len(emitter_order(config))
    counts = _excitation_counts(ne)
    support = np.nonzero(np.abs(full) > 1e-14)[0]
    n_set = set(counts[support])
    if len(n_set) != 1:
        raise OracleError("initial state must have a definite excitation number")
    n_exc = int(n_set.pop())
    sector = build_fock_sector(spec, config, n_exc, cap)
    psi0 = np.zeros(len(sector.states), dtype=complex)
    for b in support:
        em = tuple(p for p in range(ne) if (b >> (ne - 1 - p)) & 1)
        psi0[sector.index[(em, ())]] = full[b]
    states = _propagate(sector.hamiltonian, psi0, np.asarray(times, float), dense_max)
    prob = np.abs(states) ** 2
    n_em = np.array([len(em) for em, _ in sector.states], dtype=float)
    size1 = config.effective_sites()[0].size
    first = np.array([sum(1 for e in em if e < size1) for em, _ in sector.states], dtype=float)
    norm = np.sqrt(prob.sum(axis=1))
    fid = np.full(len(times), math.nan)
    target = bound_state_target(config)
    if target is not None:
        fid = _fock_fidelity(states, sector, individual_state(config, target), ne)
    total = prob @ np.full(len(sector.states), float(n_exc))
    return Series(np.asarray(times, float), prob @ n_em, prob @ first / size1, fid, norm, total)


def _fock_fidelity(states, sector: FockSector, target_full: np.ndarray, ne: int) -> np.ndarray:
    """<T| rho_emitters |T> with rho traced over the bath occupations."""
    groups: dict[tuple, list[tuple[int, int]]] = {}
    for i, (em, bos) in enumerate(sector.states):
        b = sum(1 << (ne - 1 - p) for p in em)
        groups.setdefault(bos, []).append((i, b))
    out = np.zeros(states.shape[0])
    for members in groups.values():
        idx = np.array([i for i, _ in members])
        tb = np.array([target_full[b] for _, b in members])
        out += np.abs(states[:, idx] @ tb.conj()) ** 2
    return out


# ---------------------------------------------------------------- Markovian comparator


@dataclass
class LindbladModel:
    gamma: np.ndarray  # N_e x N_e collective decay matrix
    shifts: np.ndarray  # N_e x N_e coherent exchange / Lamb shifts
    eta: float
    positions: list[tuple[int, int]]


def markov_rates(config: EmitterConfig, spec: BathSpec, eta: float) -> LindbladModel:
    """Golden-rule rates with a Gaussian-broadened delta of width ``eta``.

    Gamma_ij = (2 pi g^2 / L^2) sum_k e^{ik(r_i - r_j)} w_eta(Omega - eps_k)
    S_ij     = (g^2 / L^2) sum_k e^{ik(r_i - r_j)} PV[1/(Omega - eps_k)],
    the principal value regularized as ``d / (d^2 + eta^2)``.
    """
    if not eta > 0:
        raise OracleError("broadening eta must be positive")
    k = lattice_momenta(spec.L)
    kx, ky = np.meshgrid(k, k, indexing="ij")
    eps = dispersion(np.stack([kx.ravel(), ky.ravel()], axis=-1), spec.J)
    det = config.omega - eps
    w = np.exp(-0.5 * (det / eta) ** 2) / (math.sqrt(2 * math.pi) * eta)
    pv = det / (det**2 + eta**2)
    pos = emitter_order(config)
    n = len(pos)
    pref = config.g**2 / spec.n_sites
    gamma = np.zeros((n, n))
    shift = np.zeros((n, n))
    for i, j in itertools.product(range(n), repeat=2):
        dx, dy = pos[i][0] - pos[j][0], pos[i][1] - pos[j][1]
        ph = np.cos(kx.ravel() * dx + ky.ravel() * dy)
        gamma[i, j] = 2 * math.pi * pref * np.sum(ph * w)
        shift[i, j] = pref * np.sum(ph * pv)
    gamma = 0.5 * (gamma + gamma.T)
    ev = np.linalg.eigvalsh(gamma)
    if ev.min() < -1e-10 * max(1.0, ev.max()):
        raise OracleError(f"Gamma is not positive semidefinite (min eigenvalue {ev.min():.3e}); increase eta")
    return LindbladModel(gamma, 0.5 * (shift + shift.T), eta, pos)


def _lowering(n: int) -> list[np.ndarray]:
    sm = np.array([[0.0, 1.0], [0.0, 0.0]])  # |g><e| with (|g>, |e>) ordering
    ops = []
    for p in range(n):
        m = np.array([[1.0]])
        for q in range(n):
            m = np.kron(m, sm if q == p else np.eye(2))
        ops.append(sp.csr_matrix(m))
    return ops


def lindbladian(config: EmitterConfig, model: LindbladModel) -> sp.csr_matrix:
    """Superoperator acting on row-major vec(rho)."""
    n = len(model.positions)
    if n > 6:
        raise OracleError("Lindblad comparator supports at most 6 emitters")
    s = _lowering(n)
    d = 2**n
    eye = sp.identity(d, format="csr")
    h = sp.csr_matrix((d, d), dtype=complex)
    for i in range(n):
        h = h + config.omega * (s[i].T @ s[i])
    for i, j in itertools.product(range(n), repeat=2):
        if model.shifts[i, j] != 0:
            h = h + model.shifts[i, j] * (s[i].T @ s[j])
    # row-major vec: vec(A X B) = (A kron B^T) vec(X)
    lv = -1j * (sp.kron(h, eye) - sp.kron(eye, h.T))
    for i, j in itertools.product(range(n), repeat=2):
        gij = model.gamma[i, j]
        if gij == 0:
            continue
        si, sj = s[i], s[j]
        lv = lv + gij * (
            sp.kron(sj, si.conj())  # s_j rho s_i^dag
            - 0.5 * sp.kron(si.T @ sj, eye)
            - 0.5 * sp.kron(eye, (si.T @ sj).T)
        )
    return lv.tocsr()


def markov_lindblad(
    config: EmitterConfig,
    spec: BathSpec,
    initial: InitialState,
    times,
    eta: float,
) -> Series:
    model = markov_rates(config, spec, eta)
    n = len(model.positions)
    psi = individual_state(config, initial.vector())
    rho0 = np.outer(psi, psi.conj())
    lv = lindbladian(config, model)
    times = np.asarray(times, float)
    vecs = _propagate_liouville(lv, rho0.reshape(-1), times)
    d = 2**n
    counts = _excitation_counts(n).astype(float)
    size1 = config.effective_sites()[0].size
    first = np.array([bin(b >> (n - size1)).count("1") for b in range(d)], dtype=float)
    C, C1, fid, tr = [], [], [], []
    target = bound_state_target(config)
    tfull = individual_state(config, target) if target is not None else None
    for v in vecs:
        rho = v.reshape(d, d)
        p = np.real(np.diag(rho))
        C.append(p @ counts)
        C1.append(p @ first / size1)
        tr.append(float(np.real(np.trace(rho))))
        fid.append(float(np.real(np.vdot(tfull, rho @ tfull))) if tfull is not None else math.nan)
    tr = np.array(tr)
    return Series(times, np.array(C), np.array(C1), np.array(fid), np.sqrt(tr), np.array(C))


def _propagate_liouville(lv, v0, times):
    out = np.empty((times.size, v0.size), dtype=complex)
    v, t_prev = v0.astype(complex), 0.0
    for k, t in enumerate(times):
        if t != t_prev:
            v = spla.expm_multiply(lv * (t - t_prev), v)
        out[k] = v
        t_prev = t
    return out


def calibrate_eta(
    config: EmitterConfig,
    spec: BathSpec,
    t_fit: float | None = None,
    candidates=None,
) -> tuple[float, float, float]:
    """Pick ``eta`` so the single-emitter golden-rule rate matches the exact initial decay slope.

    The slope is fitted to ``-log C(t)`` of the exact single-emitter curve on
    ``[t_fit/2, t_fit]``, skipping the quadratic short-time regime.  Returns
    ``(eta, gamma_exact, gamma_markov)``.
    """
    single = EmitterConfig("single", 1, config.omega, config.g)
    from .emitters import encode_initial_state

    init = encode_initial_state("symmetric-single-excitation", single)
    if t_fit is None:
        t_fit = min(40.0, 0.5 * spec.L / (2 * math.sqrt(2) * spec.J))
    ts = np.linspace(0.5 * t_fit, t_fit, 21)
    c = exact_single_excitation(single, spec, init, ts).C
    slope = -np.polyfit(ts, np.log(np.clip(c, 1e-300, None)), 1)[0]
    if candidates is None:
        candidates = np.geomspace(1e-3, 1.0, 61) * spec.J
    best = None
    for eta in candidates:
        try:
            g = markov_rates(single, spec, float(eta)).gamma[0, 0]
        except OracleError:
            continue
        err = abs(g - slope)
        if best is None or err < best[0]:
            best = (err, float(eta), g)
    if best is None:
        raise OracleError("no admissible broadening found")
    return best[1], float(slope), float(best[2])
