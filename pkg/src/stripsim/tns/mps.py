"""Matrix product states with a tracked orthogonality center.

Tensors are stored with index order ``(left bond, physical, right bond)``.
"""

from __future__ import annotations

import io
import math

import numpy as np


def _qr_right(a: np.ndarray):
    """Split ``a`` into a left-orthonormal tensor and the remainder."""
    dl, d, dr = a.shape
    q, r = np.linalg.qr(a.reshape(dl * d, dr))
    return q.reshape(dl, d, -1), r


def _qr_left(a: np.ndarray):
    """Split ``a`` into the remainder and a right-orthonormal tensor."""
    dl, d, dr = a.shape
    q, r = np.linalg.qr(a.reshape(dl, d * dr).T)
    return r.T, q.T.reshape(-1, d, dr)


class MpsState:
    """An MPS with bond cap ``max_bond``, a canonical center and run bookkeeping."""

    def __init__(self, tensors, max_bond: int = 10, center: int | None = None):
        self.tensors = [np.asarray(t, dtype=complex) for t in tensors]
        for t in self.tensors:
            if t.ndim != 3:
                raise ValueError("MPS tensors must be rank 3")
        self.max_bond = max_bond
        self.center = center
        self.trunc_weight = 0.0
        self.norm_deficit = 0.0
        self.time = 0.0
        self.flags: dict[str, dict] = {}

    @classmethod
    def product(cls, vectors, max_bond: int = 10) -> "MpsState":
        """Product state, canonical at site 0 (which keeps the overall norm)."""
        tensors = [np.asarray(v, dtype=complex).reshape(1, -1, 1) for v in vectors]
        scale = 1.0
        for t in tensors[1:]:
            nrm = np.linalg.norm(t)
            if nrm == 0:
                raise ValueError("product state factor vanishes")
            t /= nrm
            scale *= nrm
        tensors[0] = tensors[0] * scale
        return cls(tensors, max_bond, center=0)

    @property
    def n_sites(self) -> int:
        return len(self.tensors)

    @property
    def dims(self) -> list[int]:
        return [t.shape[1] for t in self.tensors]

    @property
    def bonds(self) -> list[int]:
        return [t.shape[2] for t in self.tensors[:-1]]

    def flag(self, kind: str, value: float) -> bool:
        """Record a warning condition; returns True the first time ``kind`` occurs."""
        rec = self.flags.get(kind)
        if rec is None:
            self.flags[kind] = {"count": 1, "first_t": self.time, "worst": value}
            return True
        rec["count"] += 1
        rec["worst"] = max(rec["worst"], value)
        return False

    def max_bond_dim(self) -> int:
        return max(self.bonds, default=1)

    def copy(self) -> "MpsState":
        out = MpsState([t.copy() for t in self.tensors], self.max_bond, self.center)
        out.trunc_weight = self.trunc_weight
        out.norm_deficit = self.norm_deficit
        out.time = self.time
        out.flags = {k: dict(v) for k, v in self.flags.items()}
        return out

    def canonicalize(self, center: int = 0) -> None:
        """Full sweep into mixed canonical form around ``center``."""
        n = self.n_sites
        for i in range(center):
            q, r = _qr_right(self.tensors[i])
            self.tensors[i] = q
            self.tensors[i + 1] = np.tensordot(r, self.tensors[i + 1], axes=(1, 0))
        for i in range(n - 1, center, -1):
            r, q = _qr_left(self.tensors[i])
            self.tensors[i] = q
            self.tensors[i - 1] = np.tensordot(self.tensors[i - 1], r, axes=(2, 0))
        self.center = center

    def move_center(self, target: int) -> None:
        if self.center is None:
            self.canonicalize(target)
            return
        while self.center < target:
            i = self.center
            q, r = _qr_right(self.tensors[i])
            self.tensors[i] = q
            self.tensors[i + 1] = np.tensordot(r, self.tensors[i + 1], axes=(1, 0))
            self.center += 1
        while self.center > target:
            i = self.center
            r, q = _qr_left(self.tensors[i])
            self.tensors[i] = q
            self.tensors[i - 1] = np.tensordot(self.tensors[i - 1], r, axes=(2, 0))
            self.center -= 1

    def norm(self) -> float:
        if self.center is None:
            return math.sqrt(abs(self.overlap(self)))
        return float(np.linalg.norm(self.tensors[self.center]))

    def normalize(self) -> float:
        if self.center is None:
            self.canonicalize(0)
        nrm = self.norm()
        self.tensors[self.center] /= nrm
        return nrm

    def overlap(self, other: "MpsState") -> complex:
        """``<self|other>``."""
        env = np.ones((1, 1), dtype=complex)
        for a, b in zip(self.tensors, other.tensors):
            env = np.tensordot(env, b, axes=(1, 0))
            env = np.tensordot(a.conj(), env, axes=((0, 1), (0, 1)))
        return complex(env[0, 0])

    def to_vector(self) -> np.ndarray:
        psi = self.tensors[0]
        for a in self.tensors[1:]:
            psi = np.tensordot(psi, a, axes=(psi.ndim - 1, 0))
        return psi.reshape(-1)

    def apply_local(self, site: int, u: np.ndarray) -> None:
        self.tensors[site] = np.einsum("st,atb->asb", u, self.tensors[site])

    def expectations(self, ops: dict[int, np.ndarray]) -> dict[int, complex]:
        """Single-site expectation values, normalized by the state norm."""
        if not ops:
            return {}
        sites = sorted(ops)
        self.move_center(sites[0])
        out = {}
        for s in sites:
            self.move_center(s)
            a = self.tensors[s]
            nrm2 = np.vdot(a, a).real
            oa = np.einsum("st,atb->asb", ops[s], a)
            out[s] = complex(np.vdot(a, oa) / nrm2)
        return out

    def reduced_density_matrix(self, sites) -> np.ndarray:
        """Density matrix of a contiguous block of sites (trace one)."""
        sites = list(sites)
        lo, hi = sites[0], sites[-1]
        if sites != list(range(lo, hi + 1)):
            raise ValueError("reduced density matrix needs contiguous sites")
        self.move_center(lo)
        theta = self.tensors[lo]
        for i in range(lo + 1, hi + 1):
            theta = np.tensordot(theta, self.tensors[i], axes=(theta.ndim - 1, 0))
        dl, dr = theta.shape[0], theta.shape[-1]
        m = theta.reshape(dl, -1, dr)
        rho = np.einsum("asb,atb->st", m, m.conj())
        return rho / np.trace(rho).real

    # snapshot format: ascii header, then little-endian complex128 tensors in site order
    def to_bytes(self) -> bytes:
        header = (
            "MPSSNAPSHOT 1\n"
            f"sites {self.n_sites}\n"
            f"dims {' '.join(map(str, self.dims))}\n"
            f"bonds {' '.join(map(str, self.bonds))}\n"
            f"D {self.max_bond}\n"
            f"time {self.time!r}\n"
            f"center {-1 if self.center is None else self.center}\n"
            f"trunc_weight {self.trunc_weight!r}\n"
            "end\n"
        )
        buf = io.BytesIO()
        buf.write(header.encode("ascii"))
        for t in self.tensors:
            buf.write(np.ascontiguousarray(t, dtype="<c16").tobytes())
        return buf.getvalue()

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "MpsState":
        end = data.index(b"\nend\n") + len(b"\nend\n")
        meta = {}
        for line in data[:end].decode("ascii").splitlines()[1:-1]:
            key, _, val = line.partition(" ")
            meta[key] = val
        n = int(meta["sites"])
        dims = [int(v) for v in meta["dims"].split()]
        bonds = [1] + [int(v) for v in meta["bonds"].split()] + [1]
        raw = np.frombuffer(data[end:], dtype="<c16")
        pos, tensors = 0, []
        for i in range(n):
            size = bonds[i] * dims[i] * bonds[i + 1]
            tensors.append(raw[pos : pos + size].reshape(bonds[i], dims[i], bonds[i + 1]).copy())
            pos += size
        center = int(meta["center"])
        out = cls(tensors, int(meta["D"]), None if center < 0 else center)
        out.time = float(meta["time"])
        out.trunc_weight = float(meta["trunc_weight"])
        return out

    @classmethod
    def load(cls, path) -> "MpsState":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())
