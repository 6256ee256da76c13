"""Dense complex linear algebra shared by the mapping and evolution code.

Thin wrappers over LAPACK (via numpy/scipy) that pin down the conventions the
rest of the package relies on: ascending eigenvalues, a QR gauge with a real
nonnegative ``R`` diagonal, and unitary exponentials built from the
eigendecomposition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

HERMITIAN_TOL = 1e-12
RANK_TOL = 1e-10


class NotHermitianError(ValueError):
    """Raised when a matrix expected to be Hermitian is not."""

    def __init__(self, asymmetry: float, scale: float):
        self.asymmetry = asymmetry
        self.scale = scale
        super().__init__(
            f"matrix is not Hermitian: max |A - A^H| = {asymmetry:.3e} (norm {scale:.3e})"
        )


class RankDeficiencyError(np.linalg.LinAlgError):
    """Raised by :func:`thin_qr` when a column is (numerically) dependent.

    ``column`` is the zero-based index of the first deficient column.
    """

    def __init__(self, column: int, value: float):
        self.column = column
        self.value = value
        super().__init__(f"rank deficient at column {column} (|R_jj| = {value:.3e})")


@dataclass(frozen=True)
class EighResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def matrix_scale(a: np.ndarray) -> float:
    """Cheap upper bound on the spectral norm (max absolute row sum)."""
    if a.size == 0:
        return 0.0
    return float(np.max(np.sum(np.abs(a), axis=1)))


def check_hermitian(a: np.ndarray, tol: float = HERMITIAN_TOL) -> None:
    scale = matrix_scale(a)
    asym = float(np.max(np.abs(a - a.conj().T))) if a.size else 0.0
    if asym > tol * max(scale, 1.0):
        raise NotHermitianError(asym, scale)


def hermitian_eig(a, tol: float = HERMITIAN_TOL, subset_by_value=None) -> EighResult:
    """Eigendecomposition of a Hermitian matrix, eigenvalues ascending.

    ``subset_by_value=(lo, hi)`` restricts the result to eigenvalues in the
    half-open interval ``(lo, hi]`` without computing the rest.
    """
    a = _as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got {a.shape}")
    check_hermitian(a, tol)
    # symmetrize so LAPACK sees an exactly Hermitian input
    a = 0.5 * (a + a.conj().T)
    if subset_by_value is None:
        w, v = np.linalg.eigh(a)
    else:
        w, v = scipy.linalg.eigh(a, subset_by_value=subset_by_value, driver="evr")
    return EighResult(w, v)


def thin_qr(a, rank_tol: float = RANK_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR ``A = Q R`` with ``diag(R)`` real and nonnegative.

    Raises :class:`RankDeficiencyError` naming the first column whose
    ``|R_jj|`` falls below ``rank_tol * ||A||``.
    """
    a = _as_matrix(a)
    n, k = a.shape
    if n < k:
        raise ValueError(f"thin_qr needs rows >= cols, got {a.shape}")
    q, r = np.linalg.qr(a, mode="reduced")
    d = np.diag(r)
    phase = np.ones(k, dtype=complex if np.iscomplexobj(r) else float)
    nz = np.abs(d) > 0
    phase[nz] = d[nz] / np.abs(d[nz])
    q = q * phase
    r = phase.conj()[:, None] * r
    # the diagonal is now real up to rounding; store it exactly real
    r[np.diag_indices(k)] = np.abs(d)
    scale = np.linalg.norm(a, 2) if min(n, k) <= 64 else np.linalg.norm(a)
    bad = np.nonzero(np.abs(d) < rank_tol * max(scale, np.finfo(float).tiny))[0]
    if bad.size:
        raise RankDeficiencyError(int(bad[0]), float(abs(d[bad[0]])))
    return q, r


def unitary_exp(h, t: float, max_dim: int | None = None) -> np.ndarray:
    """``exp(-i t H)`` for a small Hermitian ``H`` via its eigendecomposition."""
    h = _as_matrix(h)
    if max_dim is not None and h.shape[0] > max_dim:
        raise ValueError(f"gate dimension {h.shape[0]} exceeds cap {max_dim}")
    res = hermitian_eig(h)
    v = res.eigenvectors
    return (v * np.exp(-1j * t * res.eigenvalues)) @ v.conj().T
