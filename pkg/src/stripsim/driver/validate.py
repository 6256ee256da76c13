"""Built-in invariant suite run by ``stripsim validate``.

Every check works on a small instance (at most a 9x9 lattice) and returns a
record ``{"module", "name", "ok", "detail"}``.  ``inject`` corrupts one input
on purpose so the rejection path can be exercised end to end.
"""

from __future__ import annotations

import math
import time
from typing import Callable

import numpy as np
import scipy.sparse as sp

from ..bath import SECTORS, BathSpec, build_bath, decompose_symmetry, truncate_energy
from ..chainmap import block_lanczos, build_seeds
from ..emitters import EmitterConfig, encode_initial_state, pair_operators
from ..numerics import NotHermitianError, hermitian_eig, thin_qr, unitary_exp
from ..oracles import (
    emitter_order,
    exact_single_excitation,
    exact_small_system,
    lindbladian,
    markov_lindblad,
    markov_rates,
    single_excitation_hamiltonian,
)
from ..tns import build_gate_mpos, evolve, initial_mps, measure, single_excitation_block
from ..tns.evolution import emitter_rdm
from ..tns.mps import MpsState
from .pipeline import build_model

# accumulated rounding in 1 - kept weight, summed over a few hundred MPO applications
NORM_FLOOR = 1e-10

CHECKS: list[tuple[str, str, Callable]] = []


def check(module: str, name: str):
    def deco(fn):
        CHECKS.append((module, name, fn))
        return fn

    return deco


class _Ctx:
    """Shared small instances, built lazily."""

    def __init__(self, inject: str | None):
        self.inject = inject
        self.rng = np.random.default_rng(20240611)
        self._cache: dict = {}

    def bath(self, L: int = 9):
        key = ("bath", L)
        if key not in self._cache:
            h = build_bath(BathSpec(L)).tocsr().astype(complex)
            if self.inject == "non-hermitian-bath":
                h = h.tolil()
                h[0, 1] += 0.5j  # breaks h = h^dagger
                h = h.tocsr()
            self._cache[key] = h
        return self._cache[key]

    def model(self, kind: str, n_e: int, L: int = 9, alpha=None, n_max: int = 1):
        key = ("model", kind, n_e, L, alpha, n_max)
        if key not in self._cache:
            em = EmitterConfig(kind, n_e, -1.0, 0.3)
            self._cache[key] = build_model(BathSpec(L), em, alpha, 10.0, n_max, {s: 200 for s in SECTORS})
        return self._cache[key]


def _herm(rng, n):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return (a + a.conj().T) / 2


# ------------------------------------------------------------------ numerics


@check("numerics", "eigendecomposition round trip")
def _(ctx):
    a = _herm(ctx.rng, 24)
    err = np.linalg.norm(hermitian_eig(a).reconstruct() - a, 2) / np.linalg.norm(a, 2)
    return err <= 1e-10, f"relative error {err:.2e}"


@check("numerics", "hermitian_eig rejects non-Hermitian input")
def _(ctx):
    a = _herm(ctx.rng, 6)
    a[0, 1] += 1e-6
    try:
        hermitian_eig(a)
    except NotHermitianError as exc:
        return True, f"rejected: {exc}"
    return False, "accepted a non-Hermitian matrix"


@check("numerics", "QR gauge reproducible and nonnegative")
def _(ctx):
    a = ctx.rng.normal(size=(12, 5)) + 1j * ctx.rng.normal(size=(12, 5))
    (q1, r1), (q2, r2) = thin_qr(a), thin_qr(a)
    d = np.diag(r1)
    ok = np.array_equal(r1, r2) and np.all(d.real >= 0) and np.all(d.imag == 0)
    err = np.linalg.norm(q1 @ r1 - a)
    return bool(ok and err < 1e-12), f"min diag {d.real.min():.3e}, reconstruction {err:.1e}"


@check("numerics", "unitary_exp group property")
def _(ctx):
    h = _herm(ctx.rng, 9)
    u = unitary_exp(h, 0.3) @ unitary_exp(h, 0.45)
    err = np.abs(u - unitary_exp(h, 0.75)).max()
    uni = np.abs(u.conj().T @ u - np.eye(9)).max()
    return err <= 1e-10 and uni <= 1e-12, f"composition {err:.1e}, unitarity {uni:.1e}"


# ------------------------------------------------------------------ bath


@check("bath", "lattice Hamiltonian Hermitian")
def _(ctx):
    h = ctx.bath()
    hermitian_eig(h.toarray())  # raises on an injected defect
    return True, "ok"


@check("bath", "reflections commute with the lattice Hamiltonian")
def _(ctx):
    spec = BathSpec(9)
    h = build_bath(spec).tocsr()
    worst = 0.0
    for kind in ("diagonal", "axes"):
        from ..bath import SymmetryAxes

        ax = SymmetryAxes(kind)
        for which in (1, 2):
            perm = [spec.index(*ax.reflect(which, *spec.coords(i))) for i in range(spec.n_sites)]
            p = sp.csr_matrix((np.ones(spec.n_sites), (perm, range(spec.n_sites))))
            worst = max(worst, abs(p @ h - h @ p).max())
    return worst == 0, f"max |[P, H]| = {worst:.1e}"


@check("bath", "sector blocks: dimensions, unitarity, spectrum")
def _(ctx):
    spec = BathSpec(9)
    h = build_bath(spec).tocsr()
    full = np.linalg.eigvalsh(h.toarray())
    notes = []
    ok = True
    for kind in ("diagonal", "axes"):
        from ..bath import SymmetryAxes

        sec = decompose_symmetry(h, spec, SymmetryAxes(kind))
        u = sec.change_of_basis().toarray()
        unitarity = np.abs(u.T @ u - np.eye(spec.n_sites)).max()
        herm = max(abs(sec.hamiltonian[s] - sec.hamiltonian[s].T).max() for s in SECTORS)
        parts = np.sort(np.concatenate([np.linalg.eigvalsh(sec.dense_block(s)) for s in SECTORS]))
        spec_err = np.abs(parts - full).max()
        ok &= sum(sec.dims().values()) == spec.n_sites and unitarity <= 1e-12 and herm <= 1e-14
        ok &= spec_err <= 1e-9 * spec.J
        notes.append(f"{kind}: dims {sec.dims()}, U^T U {unitarity:.1e}, spectrum {spec_err:.1e}")
    return bool(ok), "; ".join(notes)


@check("bath", "energy window bound and monotonicity")
def _(ctx):
    spec = BathSpec(9)
    sec = decompose_symmetry(build_bath(spec), spec, EmitterConfig("diagonal", 2, -1.0, 0.3).axes)
    blk = sec.hamiltonian["++"]
    w = np.ones((blk.shape[0], 1)) / math.sqrt(blk.shape[0])
    prev = None
    ok, worst = True, 0.0
    for delta in (0.5, 1.0, 2.0, 3.5):
        win = truncate_energy(blk, w, -1.0, delta)
        worst = max(worst, float(np.abs(win.energies + 1.0).max() / delta))
        kept = set(np.round(win.energies, 10))
        if prev is not None and not prev <= kept:
            ok = False
        prev = kept
    return ok and worst <= 1.0, f"max |eps - omega|/Delta = {worst:.3f}"


# ------------------------------------------------------------------ chainmap


@check("chainmap", "block Lanczos: orthonormal basis and similarity (9x9)")
def _(ctx):
    spec = BathSpec(9)
    em = EmitterConfig("diamond", 4, 0.0, 0.05)
    sec = decompose_symmetry(ctx.bath(9), spec, em.axes)
    blk = sec.hamiltonian["++"]
    rng = np.random.default_rng(5)
    w = rng.normal(size=(blk.shape[0], 2))
    seeds = build_seeds(w)
    seed_err = np.abs(seeds.q1.conj().T @ seeds.q1 - np.eye(2)).max()
    tri = block_lanczos(blk, seeds, blk.shape[0], keep_basis=True)
    q = tri.basis
    orth = np.abs(q.conj().T @ q - np.eye(q.shape[1])).max()
    hb = tri.to_dense()
    blocks = np.abs(q.conj().T @ (blk @ q) - hb).max()
    dense = blk.toarray()
    ev = np.linalg.eigvalsh(hb)
    full = np.linalg.eigvalsh(dense)
    contained = max(np.min(np.abs(full - x)) for x in ev)
    tri_ok = all(np.all(np.triu(t, 1) == 0) for t in tri.upper)
    ok = seed_err <= 1e-12 and orth <= 1e-10 and blocks <= 1e-8 and contained <= 1e-8 and tri_ok
    return ok, (f"Q1 {seed_err:.1e}, Q^dag Q {orth:.1e}, blocks {blocks:.1e}, "
                f"spectrum {contained:.1e}, T lower-triangular {tri_ok}, events {tri.events}")


@check("chainmap", "exact eigenvector seed terminates immediately")
def _(ctx):
    d = ctx.rng.normal(size=8)
    h = np.diag(d)
    e = np.zeros((8, 1))
    e[3] = 1
    tri = block_lanczos(h, build_seeds(e), 5)
    return tri.length == 1 and abs(tri.diag[0][0, 0] - d[3]) < 1e-14, f"length {tri.length}"


@check("chainmap", "chain layout ranges and term bookkeeping")
def _(ctx):
    notes, ok = [], True
    for kind, ne in (("diagonal", 2), ("diagonal", 4), ("diamond", 4), ("single", 1)):
        m = ctx.model(kind, ne)
        lay = m.layout
        widths = max(st.tri.width for st in m.strips.values())
        pairs = [(t.i, t.j) for t in lay.terms]
        unique = len(pairs) == len(set(pairs))
        onsite = [o.i for o in lay.onsite]
        ok &= lay.bath_max_range <= widths and unique and len(onsite) == len(set(onsite))
        notes.append(f"{kind}{ne}: range {lay.bath_max_range}<=N_O={widths}, {len(pairs)} terms")
    return bool(ok), "; ".join(notes)


@check("chainmap", "chain single-excitation spectrum and dynamics match the lattice")
def _(ctx):
    notes, ok = [], True
    ts = np.linspace(0.0, 8.0, 9)
    for kind, ne in (("diagonal", 2), ("diagonal", 4), ("diamond", 4), ("single", 1)):
        m = ctx.model(kind, ne)
        em, spec, lay = m.emitters, m.spec, m.layout
        h1, labels = single_excitation_block(lay)
        w, v = np.linalg.eigh(h1)
        full = np.linalg.eigvalsh(single_excitation_hamiltonian(spec, em).toarray())
        spec_err = max(np.min(np.abs(full - (x + lay.frame))) for x in w)
        init = encode_initial_state("symmetric-single-excitation", em)
        psi = np.zeros(len(labels), dtype=complex)
        dims = [lay.sites[i].dim for i in lay.emitter_sites]
        for idx, amp in enumerate(init.vector()):
            if amp != 0:
                digits = np.unravel_index(idx, dims)
                (site, level), = [(lay.emitter_sites[k], d) for k, d in enumerate(digits) if d]
                psi[labels.index((site, level))] = amp
        on_em = [k for k, (i, _) in enumerate(labels) if i in lay.emitter_sites]
        c0 = v.conj().T @ psi
        chain_c = np.array([np.sum(np.abs((v @ (np.exp(-1j * w * t) * c0))[on_em]) ** 2) for t in ts])
        exact = exact_single_excitation(em, spec, init, ts).C
        dyn = np.abs(chain_c - exact).max()
        ok &= spec_err <= 1e-8 and dyn <= 1e-10
        notes.append(f"{kind}{ne}: spectrum {spec_err:.1e}, C(t) {dyn:.1e}")
    return bool(ok), "; ".join(notes)


# ------------------------------------------------------------------ emitters


@check("emitters", "pair operators")
def _(ctx):
    ops = pair_operators()
    o1, o2, pi = ops["O1"], ops["O2"], ops["Pi"]
    e = np.eye(4)
    ref1 = np.outer(e[1], e[0]) + np.outer(e[3], e[1])
    ref2 = np.outer(e[2], e[0]) - np.outer(e[3], e[2])
    raise_ok = all(np.allclose(pi @ o - o @ pi, o) for o in (o1, o2))
    ok = np.array_equal(o1, ref1) and np.array_equal(o2, ref2) and np.array_equal(pi, np.diag([0, 1, 1, 2]))
    return bool(ok and raise_ok), f"definitions {ok}, [Pi, O] = O {raise_ok}"


@check("emitters", "initial states: unit norm, integer excitation")
def _(ctx):
    notes, ok = [], True
    cases = [("diagonal", 2, "all-excited"), ("diagonal", 4, "symmetric-single-excitation"),
             ("diamond", 4, "phi-minus"), ("diamond", 4, "phi-plus"), ("single", 1, "all-excited")]
    for kind, ne, init_kind in cases:
        em = EmitterConfig(kind, ne, -1.0, 0.3)
        init = encode_initial_state(init_kind, em)
        v = init.vector()
        sites = em.effective_sites()
        pis = [np.diag(s.operators()["Pi"]) for s in sites]
        grid = np.zeros(v.size)
        for idx in range(v.size):
            digits = np.unravel_index(idx, [s.dim for s in sites])
            grid[idx] = sum(p[d] for p, d in zip(pis, digits))
        support = grid[np.abs(v) > 1e-14]
        ok &= abs(np.linalg.norm(v) - 1) < 1e-14 and np.all(support == init.excitations)
        notes.append(f"{init_kind}/{kind}: N={init.excitations}")
    phim = encode_initial_state("phi-minus", EmitterConfig("diamond", 4, 0.0, 0.05)).vector()
    phip = encode_initial_state("phi-plus", EmitterConfig("diamond", 4, 0.0, 0.05)).vector()
    ortho = abs(np.vdot(phim, phip))
    return bool(ok and ortho < 1e-14), "; ".join(notes) + f"; <phi-|phi+> = {ortho:.1e}"


@check("emitters", "lattice Hamiltonian with emitters is reflection symmetric")
def _(ctx):
    spec = BathSpec(9)
    worst = 0.0
    for kind, ne in (("diagonal", 4), ("diamond", 4), ("single", 1)):
        em = EmitterConfig(kind, ne, -1.0, 0.3)
        h = single_excitation_hamiltonian(spec, em).toarray()
        pos = emitter_order(em)
        for which in (1, 2):
            perm = [pos.index(em.axes.reflect(which, *p)) for p in pos]
            perm += [len(pos) + spec.index(*em.axes.reflect(which, *spec.coords(i))) for i in range(spec.n_sites)]
            p = np.eye(h.shape[0])[perm]
            worst = max(worst, np.abs(p @ h @ p.T - h).max())
    return worst < 1e-12, f"max |P H P^T - H| = {worst:.1e}"


# ------------------------------------------------------------------ tns


@check("tns", "gate sets: unitary, non-crossing, each term once")
def _(ctx):
    m = ctx.model("diamond", 4, L=7, n_max=2)
    gs = build_gate_mpos(m.layout, 0.2)
    uni, crossing, seen = 0.0, False, []
    for grp in gs.groups:
        cuts = set()
        for g in grp.gates:
            uni = max(uni, np.abs(g.unitary.conj().T @ g.unitary - np.eye(g.unitary.shape[0])).max())
            mine = set(range(g.i, g.j))
            crossing |= bool(cuts & mine)
            cuts |= mine
            seen.append((g.i, g.j))
    terms = sorted((t.i, t.j) for t in m.layout.terms)
    cover = sorted(seen) == terms
    return uni <= 1e-12 and not crossing and cover, (
        f"{gs.n_sets} MPOs, unitarity {uni:.1e}, crossing {crossing}, cover exactly once {cover}")


@check("tns", "grouped MPO equals its ordered gate product")
def _(ctx):
    m = ctx.model("diagonal", 2, L=5, n_max=1)
    lay = m.layout
    gs = build_gate_mpos(lay, 0.3)
    worst = 0.0
    from ..tns.gates import _embed

    for grp in gs.groups:
        mpo = grp.mpo
        dims = lay.dims[mpo.lo : mpo.hi + 1]
        if int(np.prod(dims)) > 4096:
            continue
        ref = np.eye(int(np.prod(dims)), dtype=complex)
        order = sorted(grp.gates, key=lambda g: g.i, reverse=grp.descending)
        for g in order:
            u = g.unitary.reshape(dims[g.i - mpo.lo], dims[g.j - mpo.lo], dims[g.i - mpo.lo], dims[g.j - mpo.lo])
            full = _two_site_embed(dims, g.i - mpo.lo, g.j - mpo.lo, u)
            ref = full @ ref
        worst = max(worst, np.abs(mpo.to_dense() - ref).max())
    return worst <= 1e-12, f"max deviation {worst:.1e}"


def _two_site_embed(dims, i, j, u4):
    n = len(dims)
    d = int(np.prod(dims))
    eye = np.eye(d, dtype=complex).reshape(list(dims) * 2)
    # apply u4 on axes i, j of the output indices
    out = np.tensordot(u4, eye, axes=([2, 3], [i, j]))
    out = np.moveaxis(out, [0, 1], [i, j])
    return out.reshape(d, d)


@check("tns", "one step matches dense exponential to first order")
def _(ctx):
    from ..tns.gates import dense_hamiltonian

    m = ctx.model("diagonal", 2, L=3, n_max=1)
    lay = m.layout
    h = dense_hamiltonian(lay)
    init = encode_initial_state("symmetric-single-excitation", m.emitters)
    errs = []
    for dt in (0.1, 0.05):
        gs = build_gate_mpos(lay, dt)
        st = initial_mps(lay, init, 64)
        psi0 = st.to_vector()
        evolve(st, lay, gs, dt, first_size=2, record_every=1, max_bond=64, skip_vacuum=False)
        exact = unitary_exp(h, dt) @ psi0
        errs.append(np.linalg.norm(st.to_vector() - exact))
    ratio = errs[0] / errs[1]
    return 3.0 < ratio < 5.0 and errs[0] < 1e-2, f"local errors {errs[0]:.2e}, {errs[1]:.2e}, ratio {ratio:.2f}"


@check("tns", "RDM properties and C cross-check")
def _(ctx):
    m = ctx.model("diamond", 4, L=5, n_max=2)
    lay = m.layout
    init = encode_initial_state("phi-minus", m.emitters)
    gs = build_gate_mpos(lay, 0.25)
    st = initial_mps(lay, init, 32)
    evolve(st, lay, gs, 2.0, first_size=2, record_every=8, max_bond=32)
    rho = emitter_rdm(st, lay)
    herm = np.abs(rho - rho.conj().T).max()
    tr = abs(np.trace(rho) - 1)
    floor = np.linalg.eigvalsh((rho + rho.conj().T) / 2).min()
    pi = np.diag([0.0, 1, 1, 2])
    pis = np.kron(pi, np.eye(4)) + np.kron(np.eye(4), pi)
    c_rdm = float(np.real(np.trace(rho @ pis)))
    obs = measure(st, lay, 2, None)
    dc = abs(c_rdm - obs.C)
    ok = herm <= 1e-10 and tr <= 1e-10 and floor >= -1e-10 and dc <= 1e-10
    return ok, f"hermiticity {herm:.1e}, trace {tr:.1e}, min eig {floor:.1e}, |C_rdm - C| {dc:.1e}"


@check("tns", "excitation conservation and norm bookkeeping")
def _(ctx):
    m = ctx.model("diagonal", 4, L=7, n_max=2)
    lay = m.layout
    init = encode_initial_state("all-excited", m.emitters)
    gs = build_gate_mpos(lay, 0.1)
    st = initial_mps(lay, init, 12)
    rows = evolve(st, lay, gs, 3.0, first_size=2, record_every=5, max_bond=12)
    n0 = rows[0].total_excitations
    drift = max(abs(r.total_excitations - n0) for r in rows)
    bond = max(r.max_bond_dim for r in rows)
    ok = st.norm_deficit <= 10 * st.trunc_weight + NORM_FLOOR and bond <= 12
    return drift <= 1e-6 and ok, (f"N0 = {n0:.6f}, drift {drift:.1e}, deficit {st.norm_deficit:.1e}, "
                                  f"trunc {st.trunc_weight:.1e}, max bond {bond}")


@check("tns", "snapshot round trip")
def _(ctx):
    rng = ctx.rng
    dims = [2, 3, 4, 3]
    st = MpsState.product([rng.normal(size=d) + 1j * rng.normal(size=d) for d in dims], max_bond=6)
    st.time = 1.25
    back = MpsState.from_bytes(st.to_bytes())
    err = np.abs(back.to_vector() - st.to_vector()).max()
    return err == 0 and back.time == 1.25, f"max deviation {err:.1e}"


# ------------------------------------------------------------------ oracles


@check("oracles", "single-excitation norm conservation")
def _(ctx):
    em = EmitterConfig("diagonal", 2, -1.0, 0.3)
    init = encode_initial_state("symmetric-single-excitation", em)
    s = exact_single_excitation(em, BathSpec(9), init, np.linspace(0, 30, 31))
    err = np.abs(s.norm**2 - 1).max()
    return err <= 1e-12, f"max |norm^2 - 1| = {err:.1e}"


@check("oracles", "small-system oracle equals single-excitation oracle")
def _(ctx):
    em = EmitterConfig("diagonal", 2, -1.0, 0.3)
    init = encode_initial_state("symmetric-single-excitation", em)
    ts = np.linspace(0, 10, 11)
    a = exact_single_excitation(em, BathSpec(5), init, ts).C
    b = exact_small_system(em, BathSpec(5), init, ts).C
    err = np.abs(a - b).max()
    return err <= 1e-10, f"max |dC| = {err:.1e}"


@check("oracles", "Lindblad: rates PSD, trace and positivity preserved")
def _(ctx):
    em = EmitterConfig("diagonal", 4, -3.95, 0.05)
    spec = BathSpec(21)
    model = markov_rates(em, spec, 0.1)
    gfloor = np.linalg.eigvalsh(model.gamma).min()
    init = encode_initial_state("all-excited", em)
    s = markov_lindblad(em, spec, init, np.linspace(0, 400, 9), 0.1)
    tr = np.abs(s.norm**2 - 1).max()
    # positivity of the final density matrix
    lv = lindbladian(em, model)
    from ..oracles import _propagate_liouville, individual_state

    psi = individual_state(em, init.vector())
    v = _propagate_liouville(lv, np.outer(psi, psi.conj()).reshape(-1), np.array([50.0, 400.0]))
    d = psi.size
    floor = min(np.linalg.eigvalsh((r.reshape(d, d) + r.reshape(d, d).conj().T) / 2).min() for r in v)
    ok = gfloor >= -1e-12 * abs(model.gamma).max() and tr <= 1e-10 and floor >= -1e-9
    return ok, f"min eig Gamma {gfloor:.1e}, trace error {tr:.1e}, min eig rho {floor:.1e}"


# ------------------------------------------------------------------ driver


@check("driver", "byte-identical reruns")
def _(ctx):
    import tempfile
    from pathlib import Path

    from .config import from_dict
    from .run import run

    raw = {"bath": {"L": 5}, "emitters": {"kind": "diagonal", "N_e": 2, "omega": -1.0, "g": 0.3},
           "window": "disabled", "evolution": {"delta": 0.1, "D": 8, "t_final": 1.0, "record_every": 2}}
    blobs = []
    with tempfile.TemporaryDirectory() as tmp:
        for k in range(2):
            out = Path(tmp) / f"r{k}"
            run(from_dict(raw), out)
            blobs.append((out / "timeseries.csv").read_bytes())
    return blobs[0] == blobs[1], f"{len(blobs[0])} bytes, identical {blobs[0] == blobs[1]}"


def run_suite(inject: str | None = None, modules=None) -> list[dict]:
    ctx = _Ctx(inject)
    report = []
    for module, name, fn in CHECKS:
        if modules and module not in modules:
            continue
        t0 = time.perf_counter()
        try:
            ok, detail = fn(ctx)
        except Exception as exc:  # a check that raises is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        report.append({"module": module, "name": f"{module}: {name}", "ok": bool(ok), "detail": detail,
                       "seconds": round(time.perf_counter() - t0, 3)})
    return report
