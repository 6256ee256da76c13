"""Trotter stepping and observables on the mapped chain."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..chainmap import ChainLayout
from ..emitters import InitialState
from .apply import apply_mpo
from .gates import GateSet, local_operator
from .mps import MpsState

log = logging.getLogger(__name__)

CSV_COLUMNS = ("t", "C", "C1", "fidelity", "norm", "total_excitations", "max_bond_dim", "trunc_weight")


def initial_mps(layout: ChainLayout, init: InitialState, max_bond: int) -> MpsState:
    """Bosons in vacuum, emitter block carrying the (possibly entangled) initial state."""
    if len(init.tensors) != len(layout.emitter_sites):
        raise ValueError("initial state does not match the number of effective emitter sites")
    tensors = []
    e = iter(init.tensors)
    for site in layout.sites:
        if site.kind == "emitter":
            a = np.asarray(next(e), dtype=complex)
            if a.shape[1] != site.dim:
                raise ValueError(f"emitter site {site.label}: state dim {a.shape[1]} != {site.dim}")
            tensors.append(a)
        else:
            v = np.zeros((1, site.dim, 1), dtype=complex)
            v[0, 0, 0] = 1.0
            tensors.append(v)
    state = MpsState(tensors, max_bond)
    state.canonicalize(layout.emitter_sites[0])
    state.normalize()
    return state


TRUNC_BUDGET = 1e-8


VACUUM_TOL = 1e-24


def _is_vacuum(a: np.ndarray) -> bool:
    if a.shape[0] != 1 or a.shape[2] != 1:
        return False
    v = a[0, :, 0]
    return float(np.sum(np.abs(v[1:]) ** 2)) <= VACUUM_TOL * float(np.abs(v[0]) ** 2)


def vacuum_runs(state: MpsState, boson: list[bool]) -> tuple[int, int]:
    """``(a, b)``: sites ``[0, a)`` and ``(b, N)`` are bosons in (numerically exact) vacuum."""
    n = state.n_sites
    a = 0
    while a < n and boson[a] and _is_vacuum(state.tensors[a]):
        a += 1
    b = n - 1
    while b >= a and boson[b] and _is_vacuum(state.tensors[b]):
        b -= 1
    return a, b


def trotter_step(
    state: MpsState,
    gates: GateSet,
    max_bond: int | None = None,
    trunc_budget: float = TRUNC_BUDGET,
    boson: list[bool] | None = None,
):
    """One first-order step: every gate set in order, then leftover on-site unitaries.

    With ``boson`` flags given, gates on untouched vacuum tails are skipped;
    number-conserving gates with zero vacuum energy leave ``|00>`` unchanged.
    """
    before = state.trunc_weight
    for group in gates.groups:
        mpo = group.mpo
        if boson is not None:
            mpo = group.restricted(*vacuum_runs(state, boson))
            if mpo is None:
                continue
        apply_mpo(state, mpo, max_bond)
    for site, u in gates.single.items():
        state.apply_local(site, u)
    state.time += gates.dt
    step_weight = state.trunc_weight - before
    if step_weight > trunc_budget and state.flag("trunc_budget", step_weight):
        log.warning("t=%.6g: step truncation weight %.3e exceeds budget %.1e (further breaches counted in flags)",
                    state.time, step_weight, trunc_budget)
    return step_weight


@dataclass
class Observables:
    t: float
    C: float
    C1: float
    fidelity: float
    norm: float
    total_excitations: float
    max_bond_dim: int
    trunc_weight: float

    def row(self) -> tuple:
        return tuple(getattr(self, c) for c in CSV_COLUMNS)


def emitter_rdm(state: MpsState, layout: ChainLayout) -> np.ndarray:
    return state.reduced_density_matrix(layout.emitter_sites)


def measure(state: MpsState, layout: ChainLayout, first_size: int = 2, target=None) -> Observables:
    """C = sum of <Pi> over emitter sites, C1 = <Pi_1>/|multiplet 1|, fidelity <T|rho|T>.

    ``norm`` is the norm the state would have without the renormalizations
    after each truncated MPO application.
    """
    nrm = math.sqrt(max(0.0, 1.0 - state.norm_deficit))
    ops = {i: local_operator(layout, i, "Pi") for i in layout.emitter_sites}
    ops.update({i: local_operator(layout, i, "n") for i in layout.boson_sites()})
    vals = state.expectations(ops)
    emit = [vals[i].real for i in layout.emitter_sites]
    total = sum(v.real for v in vals.values())
    fid = math.nan
    if target is not None:
        rho = emitter_rdm(state, layout)
        t = np.asarray(target, dtype=complex)
        fid = float(np.real(np.vdot(t, rho @ t)))
    return Observables(
        t=state.time,
        C=sum(emit),
        C1=emit[0] / first_size,
        fidelity=fid,
        norm=nrm,
        total_excitations=total,
        max_bond_dim=state.max_bond_dim(),
        trunc_weight=state.trunc_weight,
    )


def evolve(
    state: MpsState,
    layout: ChainLayout,
    gates: GateSet,
    t_final: float,
    first_size: int = 2,
    target=None,
    record_every: int = 10,
    max_bond: int | None = None,
    trunc_budget: float = TRUNC_BUDGET,
    skip_vacuum: bool = True,
    callback=None,
) -> list[Observables]:
    """Step to ``t_final`` recording every ``record_every`` steps (and t=0, t_final)."""
    n_steps = int(round(t_final / gates.dt))
    if not math.isclose(n_steps * gates.dt, t_final, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError(f"t_final={t_final} is not a multiple of the step {gates.dt}")
    rows = [measure(state, layout, first_size, target)]
    boson = [s.kind == "boson" for s in layout.sites] if skip_vacuum else None
    for step in range(1, n_steps + 1):
        trotter_step(state, gates, max_bond, trunc_budget, boson)
        state.time = step * gates.dt
        if step % record_every == 0 or step == n_steps:
            rows.append(measure(state, layout, first_size, target))
            if callback is not None:
                callback(rows[-1])
    return rows
