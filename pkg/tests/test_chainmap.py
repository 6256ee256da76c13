import math

import numpy as np
import pytest

from stripsim.bath import BathSpec, SymmetryAxes, build_bath, decompose_symmetry
from stripsim.chainmap import (
    BlockTridiagonal,
    SectorStrip,
    SeedError,
    block_lanczos,
    build_seeds,
    choose_truncation_length,
    ladder_to_chain,
)
from stripsim.driver.pipeline import build_model
from stripsim.emitters import EmitterConfig, EffectiveSite


def test_seeds_distinct_sites():
    w = np.zeros((6, 2))
    w[1, 0] = w[4, 1] = 0.3
    seeds = build_seeds(w)
    assert np.allclose(np.abs(seeds.q1[[1, 4]]), np.eye(2))
    assert np.allclose(seeds.q1 @ seeds.mixing, w)
    assert np.allclose(np.abs(seeds.mixing), 0.3 * np.eye(2))


def test_seed_single_and_dependent():
    v = np.array([0.0, 0.3, 0.4])
    seeds = build_seeds(v)
    assert seeds.width == 1 and np.allclose(seeds.q1[:, 0], v / 0.5)
    assert seeds.mixing[0, 0] == pytest.approx(0.5)
    twin = build_seeds(np.stack([v, v], axis=1))
    assert twin.width == 1 and twin.deflated == 1
    with pytest.raises(SeedError):
        build_seeds(np.zeros((3, 1)))


def test_center_seed_three_by_three():
    spec = BathSpec(3)
    h = build_bath(spec)
    e = np.zeros((9, 1))
    e[spec.index(0, 0)] = 1
    tri = block_lanczos(h, build_seeds(e), 3)
    assert tri.diag[0][0, 0] == pytest.approx(0.0)
    assert tri.upper[0][0, 0] == pytest.approx(2.0)


def test_exact_eigenvector_seed():
    tri = block_lanczos(np.diag([1.0, 2.0, 5.0]), build_seeds(np.array([0.0, 0.0, 1.0])), 3)
    assert tri.length == 1 and tri.diag[0][0, 0] == pytest.approx(5.0)
    assert "exhausted" in tri.events[0]


@pytest.mark.parametrize("sector", ["++", "+-", "-+", "--"])
def test_full_length_similarity_nine(sector):
    spec = BathSpec(9)
    sec = decompose_symmetry(build_bath(spec), spec, SymmetryAxes("diagonal"))
    blk = sec.hamiltonian[sector]
    rng = np.random.default_rng(11)
    seeds = build_seeds(rng.normal(size=(blk.shape[0], 2)) + 1j * rng.normal(size=(blk.shape[0], 2)))
    tri = block_lanczos(blk, seeds, blk.shape[0], keep_basis=True)
    q = tri.basis
    assert np.abs(q.conj().T @ q - np.eye(q.shape[1])).max() < 1e-10
    hb = tri.to_dense()
    assert np.abs(q.conj().T @ (blk @ q) - hb).max() < 1e-8
    full = np.linalg.eigvalsh(blk.toarray())
    assert max(np.min(np.abs(full - x)) for x in np.linalg.eigvalsh(hb)) < 1e-8
    for e in tri.diag:
        assert np.abs(e - e.conj().T).max() < 1e-12
    for t in tri.upper:
        assert np.all(np.triu(t, 1) == 0)


def test_diagonal_input_and_serialization(tmp_path):
    d = np.linspace(-1, 1, 12)
    w = np.ones((12, 2))
    w[:, 1] = np.arange(12)
    tri = block_lanczos(d, build_seeds(w), 4, label="+-")
    path = tmp_path / "strip.bt"
    tri.save(path)
    head = path.read_bytes().split(b"\nend\n")[0].decode()
    assert head.startswith("BLOCKTRIDIAGONAL") and "sector +-" in head and "n_o 2" in head
    back = BlockTridiagonal.load(path)
    assert back.label == "+-" and back.widths == tri.widths
    assert np.array_equal(back.to_dense(), tri.to_dense())


def test_truncation_length():
    assert choose_truncation_length(0.2, 0.0) == 2
    assert choose_truncation_length(0.2, 100.0) == 60
    assert choose_truncation_length(4.0, 100.0) == 1200


def _strip(label, width, length, owners):
    rng = np.random.default_rng(len(label) + width)
    d = width * length + 3
    h = rng.normal(size=(d, d))
    h = h + h.T
    seeds = build_seeds(rng.normal(size=(d, len(owners))))
    return SectorStrip(label, block_lanczos(h, seeds, length), seeds, owners)


def test_single_strip_chain():
    em = [EffectiveSite("e", ((0, 0),))]
    lay = ladder_to_chain(em, [_strip("++", 1, 3, [(0, "sp")])])
    assert lay.n_sites == 4 and lay.emitter_sites == [0]
    nn = [t for t in lay.terms if t.region != "interaction"]
    assert len(nn) == 2 and all(t.range == 1 for t in nn)
    assert len([t for t in lay.terms if t.region == "interaction"]) == 1
    assert len(lay.onsite) == 4


def test_layout_examples():
    diag = build_model(BathSpec(9), EmitterConfig("diagonal", 2, -1.0, 0.3), None, 5.0, 1).layout
    (e,) = diag.emitter_sites
    assert diag.sites[e].dim == 4
    assert {s.sector for s in diag.sites[:e]} == {"+-"} and {s.sector for s in diag.sites[e + 1:]} == {"++"}
    dia = build_model(BathSpec(9), EmitterConfig("diamond", 4, 0.0, 0.3), None, 5.0, 1)
    lay = dia.layout
    assert len(lay.emitter_sites) == 2 and lay.emitter_sites[1] == lay.emitter_sites[0] + 1
    assert dia.strips["++"].tri.width == 2 and dia.strips["+-"].tri.width == 1
    # legs are joined only on the (++) half
    left = [t for t in lay.terms if t.region == "left"]
    sectors = {(lay.sites[t.i].sector, lay.sites[t.j].sector) for t in left}
    assert all(a == b for a, b in sectors)
    assert lay.bath_max_range <= 2


def test_rejects_inconsistent_owners():
    st = _strip("++", 1, 3, [(0, "sp")])
    with pytest.raises(ValueError):
        ladder_to_chain([EffectiveSite("e", ((0, 0),))], [SectorStrip("++", st.tri, st.seeds, [(2, "sp")])])
