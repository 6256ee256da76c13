"""Square-lattice bosonic bath: Hamiltonian, reflection sectors, energy windows.

Sites are addressed by centered coordinates ``(x, y)`` with
``x, y in [-(L-1)/2, (L-1)/2]`` so that the reflections are plain sign flips
and swaps.  The flat index of a site is row-major in ``(x, y)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .numerics import hermitian_eig

log = logging.getLogger(__name__)

SECTORS = ("++", "+-", "-+", "--")
# dense eigensolves of sector blocks up to this size compute the full spectrum
FULL_SPECTRUM_MAX = 4000


@dataclass(frozen=True)
class BathSpec:
    L: int
    J: float = 1.0

    def __post_init__(self):
        if self.L < 3 or self.L % 2 == 0:
            raise ValueError(f"lattice side must be odd and >= 3, got L={self.L}")
        if not self.J > 0:
            raise ValueError(f"hopping J must be positive, got {self.J}")

    @property
    def half(self) -> int:
        return (self.L - 1) // 2

    @property
    def n_sites(self) -> int:
        return self.L * self.L

    def index(self, x: int, y: int) -> int:
        h = self.half
        if abs(x) > h or abs(y) > h:
            raise ValueError(f"site ({x}, {y}) outside the {self.L}x{self.L} lattice")
        return (x + h) * self.L + (y + h)

    def coords(self, idx: int) -> tuple[int, int]:
        h = self.half
        return idx // self.L - h, idx % self.L - h


def dispersion(k, J: float = 1.0):
    """Band energy ``-2J (cos kx + cos ky)``; ``k`` has a trailing axis of size 2."""
    k = np.asarray(k, dtype=float)
    return -2.0 * J * (np.cos(k[..., 0]) + np.cos(k[..., 1]))


def lattice_momenta(L: int) -> np.ndarray:
    m = np.arange(L) - L // 2
    return 2 * np.pi * m / L


def band_energies(spec: BathSpec) -> np.ndarray:
    """All single-particle energies of the periodic lattice, ascending."""
    k = lattice_momenta(spec.L)
    kx, ky = np.meshgrid(k, k, indexing="ij")
    return np.sort(dispersion(np.stack([kx, ky], axis=-1), spec.J).ravel())


def build_bath(spec: BathSpec) -> sp.csr_matrix:
    """Nearest-neighbour hopping matrix with periodic boundaries (sparse)."""
    L = spec.L
    idx = np.arange(L * L).reshape(L, L)
    rows, cols = [], []
    for shift, axis in ((1, 0), (1, 1)):
        nb = np.roll(idx, -shift, axis=axis)
        rows.append(idx.ravel())
        cols.append(nb.ravel())
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    data = np.full(r.size, -spec.J)
    h = sp.coo_matrix((data, (r, c)), shape=(L * L, L * L))
    return (h + h.T).tocsr()


@dataclass(frozen=True)
class SymmetryAxes:
    """Two commuting lattice reflections.

    ``diagonal``: first reflection across the line x = y, second across
    x = -y.  ``axes``: first reflection x -> -x (mirror in the vertical axis),
    second y -> -y.
    """

    kind: str = "diagonal"

    def __post_init__(self):
        if self.kind not in ("diagonal", "axes"):
            raise ValueError(f"unknown symmetry axes {self.kind!r}")

    def reflect(self, which: int, x: int, y: int) -> tuple[int, int]:
        if self.kind == "diagonal":
            return (y, x) if which == 1 else (-y, -x)
        return (-x, y) if which == 1 else (x, -y)


def _character(sector: str, parity: tuple[int, int]) -> int:
    s1 = 1 if sector[0] == "+" else -1
    s2 = 1 if sector[1] == "+" else -1
    return (s1 ** parity[0]) * (s2 ** parity[1])


@dataclass
class BathSectors:
    spec: BathSpec
    axes: SymmetryAxes
    # per sector: sparse L^2 x d_s real orthonormal mode basis, columns = orbit modes
    basis: dict[str, sp.csr_matrix]
    hamiltonian: dict[str, sp.csr_matrix]
    # site index -> (orbit id, member position within orbit)
    orbit_of_site: np.ndarray
    orbit_member: np.ndarray
    orbit_representative: list[int]
    # per sector: orbit id -> column (or -1 if the orbit has no mode in the sector)
    orbit_column: dict[str, np.ndarray] = field(default_factory=dict)

    def dims(self) -> dict[str, int]:
        return {s: self.basis[s].shape[1] for s in SECTORS}

    def mode_column(self, sector: str, x: int, y: int) -> int:
        o = self.orbit_of_site[self.spec.index(x, y)]
        return int(self.orbit_column[sector][o])

    def site_amplitude(self, sector: str, x: int, y: int) -> tuple[int, float]:
        """Column and coefficient ``u`` such that ``a_(x,y)`` contains ``u * b_col``."""
        col = self.mode_column(sector, x, y)
        if col < 0:
            return -1, 0.0
        return col, float(self.basis[sector][self.spec.index(x, y), col])

    def dense_block(self, sector: str) -> np.ndarray:
        return self.hamiltonian[sector].toarray()

    def change_of_basis(self) -> sp.csr_matrix:
        """Full L^2 x L^2 orthogonal matrix, sector blocks in SECTORS order."""
        return sp.hstack([self.basis[s] for s in SECTORS]).tocsr()


def decompose_symmetry(bath: sp.spmatrix, spec: BathSpec, axes: SymmetryAxes) -> BathSectors:
    """Split the bath into the four sectors of two commuting reflections.

    Each orbit of the reflection group contributes at most one mode per
    sector, ``b = sum_g chi(g) a_{g p} / norm`` with ``p`` the
    lexicographically largest orbit member; that member carries coefficient
    ``+1/sqrt(|orbit|)``.
    """
    n = spec.n_sites
    orbit_of_site = np.full(n, -1, dtype=np.int64)
    orbit_member = np.full(n, -1, dtype=np.int64)
    reps: list[int] = []
    orbits: list[list[tuple[int, tuple[int, int]]]] = []
    for idx in range(n):
        if orbit_of_site[idx] >= 0:
            continue
        x, y = spec.coords(idx)
        imgs = [(x, y), axes.reflect(1, x, y), axes.reflect(2, x, y)]
        imgs.append(axes.reflect(1, *imgs[2]))
        rep = max(imgs)
        rx, ry = rep
        p1 = axes.reflect(1, rx, ry)
        p2 = axes.reflect(2, rx, ry)
        p12 = axes.reflect(1, *p2)
        elems = [(rep, (0, 0)), (p1, (1, 0)), (p2, (0, 1)), (p12, (1, 1))]
        members = sorted({p for p, _ in elems}, reverse=True)
        oid = len(reps)
        reps.append(spec.index(*rep))
        for m, p in enumerate(members):
            orbit_of_site[spec.index(*p)] = oid
            orbit_member[spec.index(*p)] = m
        orbits.append([(spec.index(*p), par) for p, par in elems])

    basis = {}
    hams = {}
    orbit_column = {}
    for s in SECTORS:
        rows, cols, vals = [], [], []
        col_of = np.full(len(orbits), -1, dtype=np.int64)
        ncol = 0
        for oid, elems in enumerate(orbits):
            acc: dict[int, float] = {}
            for site, par in elems:
                acc[site] = acc.get(site, 0.0) + _character(s, par)
            acc = {k: v for k, v in acc.items() if v != 0}
            if not acc:
                continue
            norm = math.sqrt(sum(v * v for v in acc.values()))
            for site in sorted(acc):
                rows.append(site)
                cols.append(ncol)
                vals.append(acc[site] / norm)
            col_of[oid] = ncol
            ncol += 1
        u = sp.csr_matrix((vals, (rows, cols)), shape=(n, ncol))
        basis[s] = u
        hams[s] = (u.T @ bath @ u).tocsr()
        orbit_column[s] = col_of
    return BathSectors(spec, axes, basis, hams, orbit_of_site, orbit_member, reps, orbit_column)


@dataclass
class EnergyWindow:
    omega0: float
    delta: float
    energies: np.ndarray  # kept energies, ascending
    eigenvectors: np.ndarray  # sector modes -> kept eigenmodes (columns)
    couplings: np.ndarray  # kept-mode coupling coefficients, n_keep x n_vectors
    discarded_norm2: np.ndarray  # per coupling vector
    lamb_shift: np.ndarray  # per coupling vector
    kept_indices: np.ndarray | None = None  # positions in the full sector spectrum, if known

    @property
    def n_keep(self) -> int:
        return self.energies.size

    def hamiltonian(self) -> np.ndarray:
        return np.diag(self.energies)


class EmptyWindowError(ValueError):
    pass


def lamb_shift(energies, couplings, omega0: float, guard: float = 1e-12) -> float:
    """Second-order shift ``sum |g_n|^2 / (omega0 - eps_n)`` from discarded modes."""
    energies = np.asarray(energies, dtype=float)
    couplings = np.asarray(couplings)
    if energies.size == 0:
        return 0.0
    det = omega0 - energies
    if np.any(np.abs(det) < guard):
        raise ZeroDivisionError("a discarded mode is resonant with omega0")
    return float(np.sum(np.abs(couplings) ** 2 / det))


def truncate_energy(block, couplings, omega0: float, delta: float) -> EnergyWindow:
    """Keep the eigenmodes of a sector block with ``|eps - omega0| <= delta``.

    ``couplings`` holds coupling coefficient vectors over the sector modes as
    columns (``B_i = sum_n w_ni b_n``).  The returned couplings are expressed
    over the kept eigenmodes.
    """
    if not delta > 0:
        raise ValueError(f"window half-width must be positive, got {delta}")
    w = np.asarray(couplings)
    if w.ndim == 1:
        w = w[:, None]
    dim = block.shape[0]
    lo, hi = omega0 - delta, omega0 + delta
    dense = block.toarray() if sp.issparse(block) else np.asarray(block)
    if dim <= FULL_SPECTRUM_MAX:
        res = hermitian_eig(dense)
        eps, vec = res.eigenvalues, res.eigenvectors
        keep = np.nonzero(np.abs(eps - omega0) <= delta)[0]
        if keep.size == 0:
            nearest = eps[np.argmin(np.abs(eps - omega0))]
            raise EmptyWindowError(
                f"no eigenmode within [{lo:.6g}, {hi:.6g}]; nearest eigenvalue {nearest:.6g}"
            )
        disc = np.setdiff1d(np.arange(dim), keep)
        proj_all = vec.T @ w
        kept = proj_all[keep]
        shifts = np.array(
            [lamb_shift(eps[disc], proj_all[disc, i], omega0) for i in range(w.shape[1])]
        )
        disc_norm = np.sum(np.abs(proj_all[disc]) ** 2, axis=0)
        return EnergyWindow(omega0, delta, eps[keep], vec[:, keep], kept, disc_norm, shifts, keep)

    pad = 1e-12 * max(1.0, abs(lo), abs(hi))
    res = hermitian_eig(dense, subset_by_value=(lo - pad, hi + pad))
    del dense
    eps, vec = res.eigenvalues, res.eigenvectors
    inside = np.abs(eps - omega0) <= delta
    eps, vec = eps[inside], vec[:, inside]
    if eps.size == 0:
        near = spla.eigsh(block.astype(float), k=1, sigma=omega0 + 1e-9, return_eigenvectors=False)
        raise EmptyWindowError(
            f"no eigenmode within [{lo:.6g}, {hi:.6g}]; nearest eigenvalue {near[0]:.6g}"
        )
    kept = vec.T @ w
    disc_vec = w - vec.conj() @ kept
    disc_norm = np.sum(np.abs(w) ** 2, axis=0) - np.sum(np.abs(kept) ** 2, axis=0)
    shifts = np.array(
        [_lamb_shift_resolvent(block, disc_vec[:, i], omega0) for i in range(w.shape[1])]
    )
    return EnergyWindow(omega0, delta, eps, vec, kept, disc_norm, shifts, None)


def _lamb_shift_resolvent(block, wdisc: np.ndarray, omega0: float) -> float:
    # w^T (omega0 - H)^{-1} conj(w) restricted to the discarded subspace
    # minres copes with omega0 sitting on (kept) eigenvalues: the right-hand side avoids them
    a = omega0 * sp.identity(block.shape[0], format="csr") - sp.csr_matrix(block)
    rhs = wdisc.conj()
    x, info = spla.minres(a, rhs, rtol=1e-12, maxiter=20 * block.shape[0])
    if info != 0:
        log.warning("Lamb-shift resolvent solve did not converge (info=%d)", info)
    return float(np.real(wdisc @ x))
