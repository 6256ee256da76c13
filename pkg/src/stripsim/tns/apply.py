"""Variational application of a local MPO to an MPS under a bond cap."""

from __future__ import annotations

from dataclasses import dataclass

import logging

import numpy as np

from .gates import GateMpo
from .mps import MpsState

SVD_CUTOFF = 1e-12

log = logging.getLogger(__name__)


@dataclass
class ApplyReport:
    sweeps: int
    discarded: float  # summed discarded weight of the final sweep
    norm_deficit: float  # 1 - |projected W psi|^2
    converged: bool


def _theta(lenv, renv, a, b, wa, wb):
    x = np.tensordot(lenv, a, axes=(2, 0))  # (c, w, t1, m)
    x = np.tensordot(x, wa, axes=((1, 2), (0, 2)))  # (c, m, s1, x)
    x = np.tensordot(x, b, axes=(1, 0))  # (c, s1, x, t2, e)
    x = np.tensordot(x, wb, axes=((2, 3), (0, 2)))  # (c, s1, e, s2, y)
    return np.tensordot(x, renv, axes=((2, 4), (2, 1)))  # (c, s1, s2, f)


def _grow_left(lenv, u, a, w):
    y = np.tensordot(lenv, a, axes=(2, 0))  # (c, w, t, b)
    y = np.tensordot(y, w, axes=((1, 2), (0, 2)))  # (c, b, s, w')
    y = np.tensordot(u.conj(), y, axes=((0, 1), (0, 2)))  # (c', b, w')
    return y.transpose(0, 2, 1)


def _grow_right(renv, v, a, w):
    z = np.tensordot(a, renv, axes=(2, 2))  # (e', t, f, y)
    z = np.tensordot(w, z, axes=((2, 3), (1, 3)))  # (y', s, e', f)
    return np.tensordot(v.conj(), z, axes=((1, 2), (1, 3)))  # (f', y', e')


def _split(theta, max_bond, cutoff=SVD_CUTOFF):
    cl, s1, s2, cr = theta.shape
    u, s, vh = np.linalg.svd(theta.reshape(cl * s1, s2 * cr), full_matrices=False)
    total = float(np.sum(s**2))
    if total == 0.0:
        raise FloatingPointError("state vanished under MPO application")
    keep = int(np.sum(s > cutoff * s[0]))
    keep = max(1, min(keep, max_bond))
    kept = float(np.sum(s[:keep] ** 2))
    return (
        u[:, :keep].reshape(cl, s1, keep),
        s[:keep],
        vh[:keep].reshape(keep, s2, cr),
        max(0.0, (total - kept) / total),
        kept,
    )


def _svd_guess(psi, ws, d_cap):
    """Exact ``W psi`` on the window, compressed by one SVD sweep.

    Returns the tensors and the captured weight of the compression.

    The fit is started from here rather than from ``psi`` itself: two-site
    sweeps cannot add bond sectors that the environments of the guess
    project out, so a poor guess can pin the fit far from ``W psi``.
    """
    phi = []
    for a, w in zip(psi, ws):
        x = np.tensordot(a, w, axes=(1, 2))  # (a, b, w, s, x)
        da, db, dw, ds, dx = x.shape
        phi.append(x.transpose(0, 2, 3, 1, 4).reshape(da * dw, ds, db * dx))
    kept = 1.0
    # right-canonical sweep, then truncating left-to-right SVDs
    for k in range(len(phi) - 1, 0, -1):
        dl, ds, dr = phi[k].shape
        q, r = np.linalg.qr(phi[k].reshape(dl, ds * dr).T)
        phi[k] = q.T.reshape(-1, ds, dr)
        phi[k - 1] = np.tensordot(phi[k - 1], r.T, axes=(2, 0))
    for k in range(len(phi) - 1):
        dl, ds, dr = phi[k].shape
        u, s, vh = np.linalg.svd(phi[k].reshape(dl * ds, dr), full_matrices=False)
        keep = max(1, min(int(np.sum(s > SVD_CUTOFF * s[0])), d_cap))
        kept *= float(np.sum(s[:keep] ** 2) / np.sum(s**2))
        phi[k] = u[:, :keep].reshape(dl, ds, keep)
        phi[k + 1] = np.tensordot(s[:keep, None] * vh[:keep], phi[k + 1], axes=(1, 0))
    return phi, kept


def apply_mpo(
    state: MpsState,
    mpo: GateMpo,
    max_bond: int | None = None,
    tol: float = 1e-10,
    max_sweeps: int = 10,
) -> ApplyReport:
    """Replace ``state`` by the bond-capped MPS closest to ``W |state>``.

    Only sites ``mpo.lo..mpo.hi`` change; outside the window the operator is
    the identity, so after moving the center to ``lo`` the outer
    environments are trivial.  Two-site sweeps start from an SVD-compressed
    ``W |state>`` and stop once the captured weight changes by less than
    ``tol`` (the first sweep is compared against the guess).
    """
    d_cap = max_bond or state.max_bond
    lo, hi = mpo.lo, mpo.hi
    if hi <= lo:
        raise ValueError("MPO window must span at least two sites")
    state.move_center(lo)
    psi = state.tensors[lo : hi + 1]
    ws = mpo.tensors
    n = hi - lo + 1
    prev = None
    if n > 2:
        chi, prev = _svd_guess(psi, ws, d_cap)
    else:
        chi = [a.copy() for a in psi]
    dl, dr = psi[0].shape[0], psi[-1].shape[2]
    lenvs: list = [None] * (n + 1)
    renvs: list = [None] * (n + 1)
    lenvs[0] = np.eye(dl, dtype=complex)[:, None, :]
    renvs[n] = np.eye(dr, dtype=complex)[:, None, :]
    for k in range(n - 1, 0, -1):
        renvs[k] = _grow_right(renvs[k + 1], chi[k], psi[k], ws[k])

    single_pass = n == 2
    report = ApplyReport(0, 0.0, 0.0, False)
    for sweep in range(1, max_sweeps + 1):
        discarded = 0.0
        for k in range(n - 1):
            th = _theta(lenvs[k], renvs[k + 2], psi[k], psi[k + 1], ws[k], ws[k + 1])
            u, s, v, disc, kept = _split(th, d_cap)
            discarded += disc
            chi[k] = u
            chi[k + 1] = np.tensordot(np.diag(s), v, axes=(1, 0))
            lenvs[k + 1] = _grow_left(lenvs[k], u, psi[k], ws[k])
        if single_pass:
            report = ApplyReport(1, discarded, max(0.0, 1.0 - kept), True)
            break
        for k in range(n - 2, -1, -1):
            th = _theta(lenvs[k], renvs[k + 2], psi[k], psi[k + 1], ws[k], ws[k + 1])
            u, s, v, disc, kept = _split(th, d_cap)
            discarded += disc
            chi[k + 1] = v
            chi[k] = np.tensordot(u, np.diag(s), axes=(2, 0))
            renvs[k + 1] = _grow_right(renvs[k + 2], v, psi[k + 1], ws[k + 1])
        # |W psi| = 1, so a captured weight of one cannot improve further
        converged = 1.0 - kept <= tol or (prev is not None and abs(kept - prev) <= tol * kept)
        report = ApplyReport(sweep, discarded, max(0.0, 1.0 - kept), converged)
        if converged:
            break
        prev = kept

    if not report.converged and state.flag("fit_not_converged", 1.0 - kept):
        log.warning("variational fit on sites %d..%d not converged after %d sweeps (captured weight %.12f)",
                    lo, hi, report.sweeps, kept)
    state.tensors[lo : hi + 1] = chi
    # the single pass ends with the center at the right end of the window
    state.center = hi if single_pass else lo
    nrm = np.linalg.norm(state.tensors[state.center])
    state.tensors[state.center] /= nrm
    state.trunc_weight += report.discarded
    state.norm_deficit += report.norm_deficit
    return report
