"""Block Lanczos mapping of bath sectors onto strips, and strips onto a chain.

Conventions.  A system operator ``O_j`` couples as ``O_j B_j + h.c.`` with
``B_j = sum_n w_nj b_n``.  The seed block satisfies ``Q1 C = conj(W)``,
so in the Lanczos modes ``c = Q^H b`` one has
``B_j = sum_m conj(C_mj) c_{1,m}``.  The Lanczos Hamiltonian has ``E_i`` on
the diagonal and ``T_i = Q_i^H H Q_{i+1}`` above it; ``T_i`` is lower
triangular (rectangular after a breakdown narrows the strip).
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .numerics import RANK_TOL, RankDeficiencyError, matrix_scale, thin_qr

log = logging.getLogger(__name__)


class SeedError(ValueError):
    pass


class OrthogonalityError(RuntimeError):
    def __init__(self, iteration: int, loss: float):
        self.iteration = iteration
        self.loss = loss
        super().__init__(f"Block Lanczos lost orthogonality at iteration {iteration} ({loss:.2e})")


def _gram_schmidt_deflate(a: np.ndarray, abs_tol: float):
    """Column-wise Gram-Schmidt (twice) dropping columns below ``abs_tol``.

    Returns ``Q`` (orthonormal columns) and ``R`` in row-echelon form with
    ``A = Q R`` and a positive real pivot per row.
    """
    n, k = a.shape
    dtype = np.result_type(a.dtype, float)
    q = np.zeros((n, 0), dtype=dtype)
    r = np.zeros((0, k), dtype=dtype)
    for j in range(k):
        v = a[:, j].astype(dtype, copy=True)
        coef = np.zeros(q.shape[1], dtype=dtype)
        for _ in range(2):
            c = q.conj().T @ v
            v -= q @ c
            coef += c
        nrm = np.linalg.norm(v)
        r[:, j] = coef
        if nrm > abs_tol:
            q = np.hstack([q, (v / nrm)[:, None]])
            row = np.zeros((1, k), dtype=dtype)
            row[0, j] = nrm
            r = np.vstack([r, row])
    return q, r


def orthonormalize(a: np.ndarray, abs_tol: float):
    """QR with the fixed gauge, deflating dependent columns when needed."""
    try:
        q, r = thin_qr(a)
        if np.all(np.abs(np.diag(r)) > abs_tol):
            return q, r
    except RankDeficiencyError:
        pass
    return _gram_schmidt_deflate(a, abs_tol)


@dataclass
class SeedBlock:
    q1: np.ndarray  # d x n_O
    mixing: np.ndarray  # n_O x n_vectors, Q1 @ mixing = conj(W)
    deflated: int = 0

    @property
    def width(self) -> int:
        return self.q1.shape[1]


def build_seeds(couplings, rank_tol: float = RANK_TOL) -> SeedBlock:
    w = np.asarray(couplings)
    if w.ndim == 1:
        w = w[:, None]
    norm = np.linalg.norm(w)
    if w.size == 0 or norm <= rank_tol:
        raise SeedError("all projected coupling vectors vanish")
    q, c = orthonormalize(w.conj(), rank_tol * norm)
    deflated = w.shape[1] - q.shape[1]
    if deflated:
        log.warning("seed vectors nearly dependent: strip width reduced %d -> %d", w.shape[1], q.shape[1])
    return SeedBlock(q, c, deflated)


@dataclass
class BlockTridiagonal:
    diag: list[np.ndarray]  # E_i, w_i x w_i
    upper: list[np.ndarray]  # T_i, w_i x w_{i+1}
    label: str = ""
    basis: np.ndarray | None = None
    events: list[str] = field(default_factory=list)

    @property
    def length(self) -> int:
        return len(self.diag)

    @property
    def widths(self) -> list[int]:
        return [e.shape[0] for e in self.diag]

    @property
    def width(self) -> int:
        return self.widths[0] if self.diag else 0

    def to_dense(self) -> np.ndarray:
        offs = np.concatenate([[0], np.cumsum(self.widths)])
        n = int(offs[-1])
        dtype = np.result_type(*self.diag, *self.upper) if self.upper else np.result_type(*self.diag)
        h = np.zeros((n, n), dtype=dtype)
        for i, e in enumerate(self.diag):
            h[offs[i] : offs[i + 1], offs[i] : offs[i + 1]] = e
        for i, t in enumerate(self.upper):
            h[offs[i] : offs[i + 1], offs[i + 1] : offs[i + 2]] = t
            h[offs[i + 1] : offs[i + 2], offs[i] : offs[i + 1]] = t.conj().T
        return h

    def hopping_bound(self) -> float:
        """Largest off-diagonal block norm (controls chain propagation speed)."""
        out = 0.0
        for t in self.upper:
            out = max(out, float(np.linalg.norm(t, 2)))
        return out

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    def to_bytes(self) -> bytes:
        complex_ = any(np.iscomplexobj(a) for a in self.diag + self.upper)
        header = (
            f"BLOCKTRIDIAGONAL 1\nsector {self.label or '-'}\nn_o {self.width}\n"
            f"length {self.length}\nwidths {' '.join(map(str, self.widths))}\n"
            f"complex {int(complex_)}\nend\n"
        )
        buf = io.BytesIO()
        buf.write(header.encode("ascii"))
        for i, e in enumerate(self.diag):
            buf.write(np.ascontiguousarray(e, dtype="<c16").tobytes())
            if i < len(self.upper):
                buf.write(np.ascontiguousarray(self.upper[i], dtype="<c16").tobytes())
        return buf.getvalue()

    @classmethod
    def load(cls, path) -> "BlockTridiagonal":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    @classmethod
    def from_bytes(cls, data: bytes) -> "BlockTridiagonal":
        end = data.index(b"\nend\n") + len(b"\nend\n")
        meta = {}
        for line in data[:end].decode("ascii").splitlines()[1:-1]:
            key, _, val = line.partition(" ")
            meta[key] = val
        widths = [int(v) for v in meta["widths"].split()]
        real = meta.get("complex", "1") == "0"
        raw = np.frombuffer(data[end:], dtype="<c16")
        pos = 0
        diag, upper = [], []
        for i, w in enumerate(widths):
            e = raw[pos : pos + w * w].reshape(w, w)
            pos += w * w
            diag.append(e.real.copy() if real else e.copy())
            if i + 1 < len(widths):
                w2 = widths[i + 1]
                t = raw[pos : pos + w * w2].reshape(w, w2)
                pos += w * w2
                upper.append(t.real.copy() if real else t.copy())
        label = meta.get("sector", "")
        return cls(diag, upper, "" if label == "-" else label)


def _matvec(h):
    if isinstance(h, np.ndarray) and h.ndim == 1:
        return lambda x: h[:, None] * x, float(np.max(np.abs(h))) if h.size else 0.0
    if sp.issparse(h):
        return (lambda x: h @ x), float(abs(h).sum(axis=1).max())
    h = np.asarray(h)
    return (lambda x: h @ x), matrix_scale(h)


def block_lanczos(
    h,
    seeds: SeedBlock,
    length: int,
    rank_tol: float = RANK_TOL,
    orth_tol: float = 1e-8,
    keep_basis: bool = False,
    label: str = "",
) -> BlockTridiagonal:
    """Block Lanczos recursion ``R_i = H Q_i - Q_i E_i - Q_{i-1} T_{i-1}``.

    ``h`` may be a dense or sparse Hermitian matrix, or a 1D array holding a
    diagonal.  Each new block is reorthogonalized twice against every earlier
    block.  A rank-deficient residual narrows the strip; an empty one ends
    the recursion early.
    """
    mv, scale = _matvec(h)
    q1 = seeds.q1
    dim = q1.shape[0]
    if length < 1:
        raise ValueError("length must be >= 1")
    if length * seeds.width > dim:
        log.info("requested %d blocks exceeds sector dimension %d; recursion will stop early", length, dim)
    abs_tol = rank_tol * max(scale, 1.0)
    dtype = np.result_type(q1.dtype, h.dtype if hasattr(h, "dtype") else float)
    cap = min(dim, length * seeds.width)
    qall = np.zeros((dim, cap), dtype=dtype)
    qall[:, : seeds.width] = q1
    filled = seeds.width
    diag, upper, events = [], [], []
    qi, qprev, tprev = q1.astype(dtype), None, None
    for i in range(length):
        hq = mv(qi)
        e = qi.conj().T @ hq
        e = 0.5 * (e + e.conj().T)
        diag.append(e)
        if i == length - 1:
            break
        r = hq - qi @ e
        if qprev is not None:
            r -= qprev @ tprev
        done = qall[:, :filled]
        for _ in range(2):
            r -= done @ (done.conj().T @ r)
        qn, rfac = orthonormalize(r, abs_tol)
        if qn.shape[1] == 0:
            events.append(f"breakdown: Krylov space exhausted after {i + 1} blocks")
            log.info("%s: Krylov space exhausted after %d blocks", label or "BL", i + 1)
            break
        if qn.shape[1] < qi.shape[1]:
            events.append(f"narrowing at block {i + 2}: width {qi.shape[1]} -> {qn.shape[1]}")
            log.info("%s: strip narrows at block %d (%d -> %d)", label or "BL", i + 2, qi.shape[1], qn.shape[1])
        loss = float(np.max(np.abs(done.conj().T @ qn))) if filled else 0.0
        if loss > orth_tol:
            raise OrthogonalityError(i + 1, loss)
        if filled + qn.shape[1] > qall.shape[1]:
            qall = np.hstack([qall, np.zeros((dim, qn.shape[1]), dtype=dtype)])
        qall[:, filled : filled + qn.shape[1]] = qn
        filled += qn.shape[1]
        t = rfac.conj().T
        upper.append(t)
        qprev, tprev, qi = qi, t, qn
    return BlockTridiagonal(diag, upper, label, qall[:, :filled] if keep_basis else None, events)


def choose_truncation_length(half_width: float, t_max: float, safety: float = 1.5, minimum: int = 2) -> int:
    """Light-cone estimate ``ceil(safety * 2 * half_width * t_max)`` blocks."""
    if t_max < 0:
        raise ValueError("t_max must be nonnegative")
    return max(minimum, int(math.ceil(safety * 2.0 * half_width * t_max - 1e-9)))


@dataclass(frozen=True)
class Site:
    kind: str  # "emitter" | "boson"
    dim: int
    sector: str = ""
    block: int = 0  # 1-based rung index for bosons
    leg: int = 0  # 1-based leg within the sector strip
    label: str = ""


@dataclass(frozen=True)
class Term:
    """``coeff * op_i(i) op_j(j) + h.c.`` on chain sites ``i < j``."""

    i: int
    j: int
    coeff: complex
    op_i: str
    op_j: str
    region: str  # "left" | "interaction" | "right"

    @property
    def range(self) -> int:
        return self.j - self.i


@dataclass(frozen=True)
class OnSite:
    i: int
    coeff: float
    op: str  # "n" | "Pi"


@dataclass
class SectorStrip:
    """One mapped sector: Lanczos blocks, its seeds and which operators they carry."""

    label: str
    tri: BlockTridiagonal
    seeds: SeedBlock
    owners: list[tuple[int, str]]  # per coupling column: (effective site, raising op)


@dataclass
class ChainLayout:
    sites: list[Site]
    terms: list[Term]
    onsite: list[OnSite]
    emitter_sites: list[int]
    frame: float = 0.0
    n_max: int = 1

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def dims(self) -> list[int]:
        return [s.dim for s in self.sites]

    @property
    def max_range(self) -> int:
        return max((t.range for t in self.terms), default=0)

    @property
    def bath_max_range(self) -> int:
        return max((t.range for t in self.terms if t.region != "interaction"), default=0)

    def boson_sites(self) -> list[int]:
        return [i for i, s in enumerate(self.sites) if s.kind == "boson"]


def _half_positions(strips: list[SectorStrip]):
    """Ordered (strip index, block, leg) for one half, rung by rung."""
    order = []
    nblocks = max(s.tri.length for s in strips)
    for b in range(nblocks):
        for si, s in enumerate(strips):
            if b < s.tri.length:
                for leg in range(s.tri.widths[b]):
                    order.append((si, b, leg))
    return order


def ladder_to_chain(
    emitters,
    right: list[SectorStrip],
    left: list[SectorStrip] | None = None,
    omega: float = 0.0,
    frame: float = 0.0,
    n_max: int = 1,
) -> ChainLayout:
    """Lay the strips out as one chain: mirrored left half, emitters, right half.

    ``emitters`` is the list of effective sites (anything with ``dim`` and
    ``name``).  Energies are written relative to ``frame`` (a multiple of
    the conserved excitation number, so observables are unchanged).
    """
    left = left or []
    if not right and not left:
        raise ValueError("need at least one sector strip")
    k = len(emitters)
    for s in right + left:
        if len(s.owners) != s.seeds.mixing.shape[1]:
            raise ValueError(f"sector {s.label}: {len(s.owners)} owners for {s.seeds.mixing.shape[1]} couplings")
        if s.tri.width != s.seeds.width:
            raise ValueError(f"sector {s.label}: strip width {s.tri.width} != seed width {s.seeds.width}")
        for site, _ in s.owners:
            if not 0 <= site < k:
                raise ValueError(f"sector {s.label} couples to unknown effective site {site}")

    left_order = _half_positions(left)[::-1] if left else []
    right_order = _half_positions(right) if right else []
    sites: list[Site] = []
    pos: dict[tuple[str, int, int, int], int] = {}

    def add_boson(side, strips, si, b, leg):
        st = strips[si]
        pos[(side, si, b, leg)] = len(sites)
        sites.append(Site("boson", n_max + 1, st.label, b + 1, leg + 1, f"{st.label}[{b + 1},{leg + 1}]"))

    for si, b, leg in left_order:
        add_boson("L", left, si, b, leg)
    emitter_sites = []
    for e in emitters:
        emitter_sites.append(len(sites))
        sites.append(Site("emitter", e.dim, label=e.name))
    for si, b, leg in right_order:
        add_boson("R", right, si, b, leg)

    terms: list[Term] = []
    onsite: list[OnSite] = []

    def add_term(p, q, coeff, op_p, op_q, region):
        if abs(coeff) == 0:
            return
        if p < q:
            terms.append(Term(p, q, coeff, op_p, op_q, region))
        else:
            # operators on distinct sites commute: keep each operator with its site
            terms.append(Term(q, p, coeff, op_q, op_p, region))

    for side, strips, region in (("L", left, "left"), ("R", right, "right")):
        for si, st in enumerate(strips):
            tri = st.tri
            for b, e in enumerate(tri.diag):
                w = e.shape[0]
                for a in range(w):
                    p = pos[(side, si, b, a)]
                    onsite.append(OnSite(p, float(np.real(e[a, a])) - frame, "n"))
                    for c in range(a + 1, w):
                        add_term(p, pos[(side, si, b, c)], e[a, c], "adag", "a", region)
            for b, t in enumerate(tri.upper):
                for a in range(t.shape[0]):
                    for c in range(t.shape[1]):
                        if t[a, c] != 0:
                            add_term(pos[(side, si, b, a)], pos[(side, si, b + 1, c)], t[a, c], "adag", "a", region)
            mix = st.seeds.mixing
            for j, (esite, op) in enumerate(st.owners):
                for m in range(mix.shape[0]):
                    kappa = np.conj(mix[m, j])
                    if abs(kappa) > 0:
                        add_term(emitter_sites[esite], pos[(side, si, 0, m)], kappa, op, "a", "interaction")

    for i in emitter_sites:
        onsite.append(OnSite(i, omega - frame, "Pi"))

    layout = ChainLayout(sites, terms, onsite, emitter_sites, frame, n_max)
    width = max([s.tri.width for s in left + right] + [1])
    nleg = max(
        [sum(s.tri.widths[0] for s in left if s.tri.length), sum(s.tri.widths[0] for s in right if s.tri.length), 1]
    )
    if layout.bath_max_range > max(width, nleg):
        raise AssertionError(f"bath term range {layout.bath_max_range} exceeds strip width {width}")
    return layout
