"""Two-site gates grouped into non-crossing sets, each compressed to one MPO."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..chainmap import ChainLayout, Term
from ..emitters import pair_operators, single_operators
from ..numerics import unitary_exp

REGION_ORDER = ("left", "interaction", "right")


def boson_operators(dim: int) -> dict[str, np.ndarray]:
    a = np.diag(np.sqrt(np.arange(1, dim, dtype=float)), k=1)
    return {"a": a, "adag": a.T.copy(), "n": np.diag(np.arange(dim, dtype=float))}


def site_operators(layout: ChainLayout, i: int) -> dict[str, np.ndarray]:
    site = layout.sites[i]
    if site.kind == "boson":
        return boson_operators(site.dim)
    return pair_operators() if site.dim == 4 else single_operators()


def local_operator(layout: ChainLayout, i: int, label: str) -> np.ndarray:
    return site_operators(layout, i)[label]


def term_matrix(layout: ChainLayout, term: Term) -> np.ndarray:
    x = local_operator(layout, term.i, term.op_i)
    y = local_operator(layout, term.j, term.op_j)
    h = term.coeff * np.kron(x, y)
    return h + h.conj().T


def onsite_matrices(layout: ChainLayout) -> dict[int, np.ndarray]:
    out: dict[int, np.ndarray] = {}
    for o in layout.onsite:
        m = o.coeff * local_operator(layout, o.i, o.op)
        out[o.i] = out.get(o.i, 0) + m
    return out


def color_intervals(terms: list[Term]) -> list[list[Term]]:
    """First-fit partition into sets whose spans share no bond cut.

    Sorted by left end, first-fit uses the minimum number of sets
    (the maximum number of spans covering one cut).
    """
    groups: list[list[Term]] = []
    reach: list[int] = []
    for t in sorted(terms, key=lambda t: (t.i, t.j)):
        for g, r in enumerate(reach):
            if r <= t.i:
                groups[g].append(t)
                reach[g] = t.j
                break
        else:
            groups.append([t])
            reach.append(t.j)
    return groups


@dataclass
class GateMpo:
    """MPO for one gate set, acting on sites ``lo..hi``; tensors are (wl, s, t, wr)."""

    lo: int
    hi: int
    tensors: list[np.ndarray]
    region: str
    n_gates: int

    @property
    def bond_dims(self) -> list[int]:
        return [w.shape[3] for w in self.tensors[:-1]]

    def to_dense(self) -> np.ndarray:
        op = self.tensors[0]
        for w in self.tensors[1:]:
            op = np.tensordot(op, w, axes=(op.ndim - 1, 0))
        # op: (1, s0, t0, s1, t1, ..., 1)
        n = len(self.tensors)
        op = op.reshape(op.shape[1:-1])
        perm = [2 * k for k in range(n)] + [2 * k + 1 for k in range(n)]
        op = op.transpose(perm)
        d = int(np.prod(op.shape[:n]))
        return op.reshape(d, d)


@dataclass
class Gate:
    i: int
    j: int
    unitary: np.ndarray
    left: np.ndarray  # operator-SVD factor on site i: (s, t, k)
    right: np.ndarray  # factor on site j: (k, s, t)


@dataclass
class GateGroup:
    """One non-crossing set.  ``descending`` groups apply their gates right to left."""

    region: str
    gates: list[Gate]  # sorted by position
    dims: list[int]
    descending: bool = False
    mpo: GateMpo = None

    def __post_init__(self):
        if self.mpo is None:
            self.mpo = _group_mpo(self.dims, self.gates, self.region, self.descending)

    def restricted(self, vac_left: int, vac_right: int) -> GateMpo | None:
        """MPO without the gates that provably act on vacuum.

        ``[0, vac_left)`` and ``(vac_right, N)`` are exact-vacuum boson runs.
        Gates inside the run on the side this group starts from meet the
        vacuum when applied (their earlier neighbours did too) and are dropped.
        """
        if self.descending:
            keep = [g for g in self.gates if g.i <= vac_right]
        else:
            keep = [g for g in self.gates if g.j >= vac_left]
        if len(keep) == len(self.gates):
            return self.mpo
        if not keep:
            return None
        return _group_mpo(self.dims, keep, self.region, self.descending)


@dataclass
class GateSet:
    groups: list[GateGroup]
    single: dict[int, np.ndarray] = field(default_factory=dict)  # leftover on-site unitaries
    dt: float = 0.0

    @property
    def mpos(self) -> list[GateMpo]:
        return [g.mpo for g in self.groups]

    @property
    def n_sets(self) -> int:
        return len(self.groups)


def _split_gate(u: np.ndarray, di: int, dj: int, cutoff: float = 1e-13):
    """Operator SVD ``U = sum_k A_k (x) B_k``; A: (s, t, k), B: (k, s, t)."""
    t = u.reshape(di, dj, di, dj).transpose(0, 2, 1, 3).reshape(di * di, dj * dj)
    x, s, vh = np.linalg.svd(t, full_matrices=False)
    keep = max(1, int(np.sum(s > cutoff * s[0])))
    sq = np.sqrt(s[:keep])
    a = (x[:, :keep] * sq).reshape(di, di, keep)
    b = (sq[:, None] * vh[:keep]).reshape(keep, dj, dj)
    return a, b


def _group_mpo(dims: list[int], gates: list[Gate], region: str, descending: bool = False) -> GateMpo:
    lo = min(g.i for g in gates)
    hi = max(g.j for g in gates)
    left_parts: dict[int, np.ndarray] = {}
    right_parts: dict[int, np.ndarray] = {}
    inside: dict[int, int] = {}  # site -> carried bond dim
    for g in gates:
        left_parts[g.i] = g.left
        right_parts[g.j] = g.right
        for k in range(g.i + 1, g.j):
            inside[k] = g.left.shape[2]
    tensors = []
    for k in range(lo, hi + 1):
        d = dims[k]
        if k in inside:
            w = np.einsum("ab,st->astb", np.eye(inside[k]), np.eye(d))
        elif k in left_parts and k in right_parts:
            b, a = right_parts[k], left_parts[k]
            if descending:
                # the gate starting here acts first, then the one ending here
                w = np.einsum("kst,tul->ksul", b, a)
            else:
                w = np.einsum("ktu,stl->ksul", b, a)
        elif k in left_parts:
            w = left_parts[k][None]
        elif k in right_parts:
            w = right_parts[k][..., None]
        else:
            w = np.eye(d)[None, :, :, None]
        tensors.append(np.asarray(w, dtype=complex))
    return GateMpo(lo, hi, tensors, region, len(gates))


def build_gate_mpos(layout: ChainLayout, dt: float) -> GateSet:
    """First-order splitting of ``exp(-i H dt)`` into non-crossing gate sets.

    Sets are ordered left region, interaction, right region.  Inside a set
    gates run from the outer end of the chain toward the emitters (left to
    right on the left half, right to left on the right half).  Each on-site
    energy is folded into the first gate, in application order, touching
    its site; sites no gate touches get a separate single-site unitary.
    """
    dims = layout.dims
    ordered: list[tuple[str, list[Term], bool]] = []
    for region in REGION_ORDER:
        terms = [t for t in layout.terms if t.region == region]
        desc = region == "right"
        for g in color_intervals(terms):
            ordered.append((region, g, desc))
    onsite = onsite_matrices(layout)
    touched: set[int] = set()
    groups = []
    for region, group, desc in ordered:
        gates = []
        for t in sorted(group, key=lambda t: t.i, reverse=desc):
            h = term_matrix(layout, t)
            for k, pos in ((t.i, "i"), (t.j, "j")):
                if k in onsite and k not in touched:
                    m = onsite[k]
                    if pos == "i":
                        h = h + np.kron(m, np.eye(dims[t.j]))
                    else:
                        h = h + np.kron(np.eye(dims[t.i]), m)
                    touched.add(k)
            u = unitary_exp(h, dt)
            a, b = _split_gate(u, dims[t.i], dims[t.j])
            gates.append(Gate(t.i, t.j, u, a, b))
        gates.sort(key=lambda g: g.i)
        groups.append(GateGroup(region, gates, dims, desc))
    single = {k: unitary_exp(m, dt) for k, m in onsite.items() if k not in touched}
    return GateSet(groups, single, dt)


def _embed(dims: list[int], ops: dict[int, np.ndarray]) -> np.ndarray:
    out = np.array([[1.0 + 0j]])
    for k, d in enumerate(dims):
        out = np.kron(out, ops.get(k, np.eye(d)))
    return out


def dense_hamiltonian(layout: ChainLayout, max_dim: int = 4096) -> np.ndarray:
    """Full chain Hamiltonian as a dense matrix (tiny chains only)."""
    dims = layout.dims
    n = int(np.prod(dims))
    if n > max_dim:
        raise ValueError(f"Hilbert space {n} exceeds cap {max_dim}")
    h = np.zeros((n, n), dtype=complex)
    for t in layout.terms:
        x = local_operator(layout, t.i, t.op_i)
        y = local_operator(layout, t.j, t.op_j)
        k = t.coeff * _embed(dims, {t.i: x, t.j: y})
        h += k + k.conj().T
    for i, m in onsite_matrices(layout).items():
        h += _embed(dims, {i: m})
    return h


def _excited_levels(layout: ChainLayout, i: int) -> list[int]:
    ops = site_operators(layout, i)
    number = ops["n"] if "n" in ops else ops["Pi"]
    return [int(k) for k in np.nonzero(np.isclose(np.diag(number), 1.0))[0]]


def single_excitation_block(layout: ChainLayout) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Chain Hamiltonian restricted to one excitation (all other sites in |0>).

    Returns the matrix and the (site, level) label of each basis state.
    """
    labels = [(i, lv) for i in range(layout.n_sites) for lv in _excited_levels(layout, i)]
    index = {lab: k for k, lab in enumerate(labels)}
    h = np.zeros((len(labels), len(labels)), dtype=complex)
    for t in layout.terms:
        k = term_matrix(layout, t)
        dj = layout.sites[t.j].dim
        states = [((t.i, a), a * dj) for a in _excited_levels(layout, t.i)]
        states += [((t.j, b), b) for b in _excited_levels(layout, t.j)]
        for la, ra in states:
            for lb, rb in states:
                h[index[la], index[lb]] += k[ra, rb]
    for i, m in onsite_matrices(layout).items():
        for a in _excited_levels(layout, i):
            for b in _excited_levels(layout, i):
                h[index[(i, a)], index[(i, b)]] += m[a, b]
    return h, labels
