"""Emitter configurations, effective multiplet sites, couplings and initial states.

A reflection-related pair of two-level emitters is stored as one
four-level site in the collective basis ``(|0>, |1+>, |1->, |2>)``:

    |1+-> = (s_a^+ +- s_b^+)/sqrt(2) |gg>,   |2> = |ee>,

where ``a`` is the lexicographically larger member of the pair.  A lone
emitter on the symmetry center is a two-level site ``(|g>, |e>)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bath import SECTORS, BathSectors, SymmetryAxes

ZERO, ONE_PLUS, ONE_MINUS, TWO = range(4)
PAIR_LABELS = ("0", "1+", "1-", "2")


def pair_operators() -> dict[str, np.ndarray]:
    o1 = np.zeros((4, 4))
    o1[ONE_PLUS, ZERO] = 1.0
    o1[TWO, ONE_PLUS] = 1.0
    o2 = np.zeros((4, 4))
    o2[ONE_MINUS, ZERO] = 1.0
    o2[TWO, ONE_MINUS] = -1.0
    pi = np.diag([0.0, 1.0, 1.0, 2.0])
    return {"O1": o1, "O2": o2, "Pi": pi}


def single_operators() -> dict[str, np.ndarray]:
    sp = np.array([[0.0, 0.0], [1.0, 0.0]])
    return {"sp": sp, "Pi": np.diag([0.0, 1.0])}


def pair_to_product_basis() -> np.ndarray:
    """Columns: pair states in the two-emitter product basis |gg>,|ge>,|eg>,|ee>.

    The first tensor factor is the lexicographically larger emitter.
    """
    s = 1 / math.sqrt(2)
    m = np.zeros((4, 4))
    m[0, ZERO] = 1.0
    m[2, ONE_PLUS], m[1, ONE_PLUS] = s, s
    m[2, ONE_MINUS], m[1, ONE_MINUS] = s, -s
    m[3, TWO] = 1.0
    return m


@dataclass(frozen=True)
class EffectiveSite:
    name: str
    members: tuple[tuple[int, int], ...]

    @property
    def dim(self) -> int:
        return 4 if len(self.members) == 2 else 2

    @property
    def size(self) -> int:
        return len(self.members)

    def operators(self) -> dict[str, np.ndarray]:
        return pair_operators() if self.size == 2 else single_operators()


@dataclass(frozen=True)
class EmitterConfig:
    kind: str
    n_e: int
    omega: float
    g: float

    def __post_init__(self):
        if self.kind == "diagonal":
            if self.n_e < 2 or self.n_e % 2:
                raise ValueError(f"diagonal configuration needs an even N_e >= 2, got {self.n_e}")
        elif self.kind == "diamond":
            if self.n_e != 4:
                raise ValueError(f"diamond configuration has exactly 4 emitters, got {self.n_e}")
        elif self.kind == "single":
            if self.n_e != 1:
                raise ValueError(f"single configuration has one emitter, got {self.n_e}")
        else:
            raise ValueError(f"unknown emitter configuration {self.kind!r}")
        if not (math.isfinite(self.omega) and math.isfinite(self.g)):
            raise ValueError("emitter frequency and coupling must be finite")

    @property
    def axes(self) -> SymmetryAxes:
        return SymmetryAxes("axes" if self.kind == "diamond" else "diagonal")

    def effective_sites(self) -> list[EffectiveSite]:
        if self.kind == "diagonal":
            out = []
            for ell in range(1, self.n_e // 2 + 1):
                x = 2 * ell - 1
                out.append(EffectiveSite(f"pair{ell}", ((x, x), (-x, -x))))
            return out
        if self.kind == "diamond":
            return [
                EffectiveSite("v", ((0, 2), (0, -2))),
                EffectiveSite("h", ((2, 0), (-2, 0))),
            ]
        return [EffectiveSite("center", ((0, 0),))]

    def positions(self) -> list[tuple[int, int]]:
        """Individual emitter positions, in the numbering used for target states.

        For the diamond this is (0,2), (2,0), (0,-2), (-2,0) going around.
        """
        if self.kind == "diamond":
            return [(0, 2), (2, 0), (0, -2), (-2, 0)]
        return [p for s in self.effective_sites() for p in s.members]


@dataclass(frozen=True)
class CouplingRecord:
    site: int  # effective-site index
    op: str  # operator label on the effective site (raising)
    sector: str
    column: int  # orbit-mode column in the sector basis
    strength: float


class SymmetryError(ValueError):
    pass


def check_symmetric(config: EmitterConfig, axes: SymmetryAxes, half: int) -> None:
    pos = set(config.positions())
    for x, y in pos:
        if max(abs(x), abs(y)) > half:
            raise SymmetryError(f"emitter at ({x}, {y}) lies outside the lattice")
        for which in (1, 2):
            if axes.reflect(which, x, y) not in pos:
                raise SymmetryError(
                    f"emitter set is not invariant under reflection {which} of {axes.kind!r}"
                )
    for site in config.effective_sites():
        orbit = {site.members[0]}
        x, y = site.members[0]
        for which in (1, 2):
            orbit.add(axes.reflect(which, x, y))
        orbit.add(axes.reflect(1, *axes.reflect(2, x, y)))
        if orbit != set(site.members):
            raise SymmetryError(
                f"multiplet {site.name} {site.members} is not a full reflection orbit {sorted(orbit)}"
            )


def build_interaction(config: EmitterConfig, sectors: BathSectors, tol: float = 1e-14) -> list[CouplingRecord]:
    """Couplings of effective-site raising operators to sector orbit modes.

    The spatial term ``g (s_p^+ a_p + h.c.)`` is rewritten through
    ``a_p = sum_s u_s(p) b_s``; for a pair ``s_a^+ = (O1 + O2)/sqrt 2`` and
    ``s_b^+ = (O1 - O2)/sqrt 2``.
    """
    if sectors.axes != config.axes:
        raise SymmetryError(
            f"configuration {config.kind!r} needs {config.axes.kind!r} axes, sectors use {sectors.axes.kind!r}"
        )
    check_symmetric(config, sectors.axes, sectors.spec.half)
    records = []
    for i, site in enumerate(config.effective_sites()):
        for s in SECTORS:
            if site.size == 1:
                col, u = sectors.site_amplitude(s, *site.members[0])
                if col >= 0 and abs(u) > tol:
                    records.append(CouplingRecord(i, "sp", s, col, config.g * u))
                continue
            col, ua = sectors.site_amplitude(s, *site.members[0])
            colb, ub = sectors.site_amplitude(s, *site.members[1])
            if col < 0:
                continue
            assert col == colb
            c1 = config.g * (ua + ub) / math.sqrt(2)
            c2 = config.g * (ua - ub) / math.sqrt(2)
            if abs(c1) > tol:
                records.append(CouplingRecord(i, "O1", s, col, c1))
            if abs(c2) > tol:
                records.append(CouplingRecord(i, "O2", s, col, c2))
    return records


def coupling_vectors(records: list[CouplingRecord], sector: str, dim: int):
    """Coefficient vectors (columns) and their (site, op) owners for one sector."""
    mine = [r for r in records if r.sector == sector]
    w = np.zeros((dim, len(mine)))
    for j, r in enumerate(mine):
        w[r.column, j] = r.strength
    return w, [(r.site, r.op) for r in mine]


@dataclass
class InitialState:
    kind: str
    tensors: list[np.ndarray]  # MPS over effective sites, shapes (Dl, d, Dr)
    excitations: int
    dims: list[int] = field(default_factory=list)

    def vector(self) -> np.ndarray:
        psi = self.tensors[0]
        for a in self.tensors[1:]:
            psi = np.tensordot(psi, a, axes=(psi.ndim - 1, 0))
        return psi.reshape(-1)


def _product(vectors) -> list[np.ndarray]:
    return [np.asarray(v, dtype=complex).reshape(1, -1, 1) for v in vectors]


def encode_initial_state(kind: str, config: EmitterConfig, custom=None) -> InitialState:
    sites = config.effective_sites()
    dims = [s.dim for s in sites]
    k = len(sites)

    def basis(d, i):
        v = np.zeros(d, dtype=complex)
        v[i] = 1.0
        return v

    if kind == "all-excited":
        tensors = _product([basis(d, d - 1) for d in dims])
        return InitialState(kind, tensors, config.n_e, dims)
    if kind == "symmetric-single-excitation":
        if config.kind == "single":
            return InitialState(kind, _product([basis(2, 1)]), 1, dims)
        if k == 1:
            return InitialState(kind, _product([basis(4, ONE_PLUS)]), 1, dims)
        c = math.sqrt(1.0 / k)
        vac, exc = basis(4, ZERO), c * basis(4, ONE_PLUS)
        tensors = []
        for i in range(k):
            if i == 0:
                a = np.zeros((1, 4, 2), dtype=complex)
                a[0, :, 0], a[0, :, 1] = vac, exc
            elif i == k - 1:
                a = np.zeros((2, 4, 1), dtype=complex)
                a[0, :, 0], a[1, :, 0] = exc, vac
            else:
                a = np.zeros((2, 4, 2), dtype=complex)
                a[0, :, 0], a[0, :, 1], a[1, :, 1] = vac, exc, vac
            tensors.append(a)
        return InitialState(kind, tensors, 1, dims)
    if kind in ("phi-minus", "phi-plus"):
        if config.kind != "diamond":
            raise ValueError(f"{kind} is defined for the four-emitter diamond, not {config.kind!r}")
        sign = -1.0 if kind == "phi-minus" else 1.0
        av = np.zeros((1, 4, 2), dtype=complex)
        av[0, ONE_PLUS, 0] = 1.0
        av[0, TWO, 1] = 1.0
        ah = np.zeros((2, 4, 1), dtype=complex)
        ah[0, TWO, 0] = 1 / math.sqrt(2)
        ah[1, ONE_PLUS, 0] = sign / math.sqrt(2)
        return InitialState(kind, [av, ah], 3, dims)
    if kind == "custom-product":
        if custom is None or len(custom) != k:
            raise ValueError(f"custom-product needs one state vector per effective site ({k})")
        vecs = []
        for d, v in zip(dims, custom):
            v = np.asarray(v, dtype=complex)
            if v.shape != (d,):
                raise ValueError(f"custom site state must have length {d}")
            vecs.append(v / np.linalg.norm(v))
        pis = [np.diag(s.operators()["Pi"]) for s in sites]
        n = sum(float(np.real(np.vdot(v, p * v))) for v, p in zip(vecs, pis))
        return InitialState(kind, _product(vecs), int(round(n)), dims)
    raise ValueError(f"unknown initial state {kind!r}")


def bound_state_target(config: EmitterConfig) -> np.ndarray | None:
    """Single-excitation antisymmetric emitter state used for the fidelity.

    ``(s_1^+ - s_2^+ + s_3^+ - s_4^+)/2 |gggg>`` for the diamond, which in the
    (v, h) pair basis is ``(|1+,0> - |0,1+>)/sqrt 2``.
    """
    if config.kind != "diamond":
        return None
    v = np.zeros((4, 4))
    v[ONE_PLUS, ZERO] = 1 / math.sqrt(2)
    v[ZERO, ONE_PLUS] = -1 / math.sqrt(2)
    return v.reshape(-1)
