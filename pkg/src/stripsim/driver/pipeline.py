"""End-to-end assembly: lattice bath -> sectors -> window -> strips -> chain -> MPS run."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..bath import SECTORS, BathSpec, build_bath, decompose_symmetry, truncate_energy
from ..chainmap import (
    ChainLayout,
    OnSite,
    SectorStrip,
    Site,
    block_lanczos,
    build_seeds,
    choose_truncation_length,
    ladder_to_chain,
)
from ..emitters import EmitterConfig, InitialState, bound_state_target, build_interaction, coupling_vectors
from ..tns import GateSet, MpsState, Observables, build_gate_mpos, evolve, initial_mps

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A pipeline stage rejected its input; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class Model:
    spec: BathSpec
    emitters: EmitterConfig
    layout: ChainLayout
    strips: dict[str, SectorStrip]
    diagnostics: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)


def sector_layout(kind: str) -> tuple[list[str], list[str]]:
    """(left, right) sector labels; (++) always sits to the right of the emitters."""
    if kind == "diagonal":
        return ["+-"], ["++"]
    if kind == "diamond":
        return ["+-", "-+"], ["++"]
    return [], ["++"]


class _Timer:
    def __init__(self, store, name):
        self.store, self.name = store, name

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.store[self.name] = self.store.get(self.name, 0.0) + time.perf_counter() - self.t0


def build_model(
    spec: BathSpec,
    emitters: EmitterConfig,
    alpha: float | None,
    t_final: float,
    n_max: int,
    l_trunc: dict[str, int] | None = None,
    safety: float = 1.5,
    frame: float | None = None,
) -> Model:
    """Map the lattice problem onto a chain layout.

    ``alpha=None`` keeps the full band.  Missing ``l_trunc`` entries fall
    back to the light-cone estimate from the sector's spectral half-width.
    """
    timings: dict[str, float] = {}
    diag: dict = {"sectors": {}}
    warnings: list[str] = []
    frame = emitters.omega if frame is None else frame
    l_trunc = dict(l_trunc or {})
    try:
        with _Timer(timings, "bath"):
            h = build_bath(spec)
            sectors = decompose_symmetry(h, spec, emitters.axes)
        diag["sector_dims"] = sectors.dims()
    except ValueError as exc:
        raise StageError("bath", str(exc)) from exc
    try:
        records = build_interaction(emitters, sectors)
    except ValueError as exc:
        raise StageError("emitters", str(exc)) from exc

    left, right = sector_layout(emitters.kind)
    strips: dict[str, SectorStrip] = {}
    for s in left + right:
        w, owners = coupling_vectors(records, s, sectors.dims()[s])
        if not owners:
            continue
        info: dict = {"dim": sectors.dims()[s], "n_couplings": len(owners)}
        try:
            with _Timer(timings, "window"):
                if alpha is None:
                    hs, ws = sectors.hamiltonian[s], w
                    half_width = 4.0 * spec.J
                else:
                    win = truncate_energy(sectors.hamiltonian[s], w, emitters.omega, alpha * emitters.g)
                    hs, ws = win.energies, win.couplings
                    half_width = alpha * emitters.g
                    info.update(
                        window_modes=win.n_keep,
                        lamb_shift=[float(x) for x in win.lamb_shift],
                        discarded_norm2=[float(x) for x in win.discarded_norm2],
                    )
        except ValueError as exc:
            raise StageError("window", f"sector {s}: {exc}") from exc
        try:
            with _Timer(timings, "chainmap"):
                seeds = build_seeds(ws)
                length = l_trunc.get(s) or choose_truncation_length(half_width, t_final, safety)
                tri = block_lanczos(hs, seeds, length, label=s)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise StageError("chainmap", f"sector {s}: {exc}") from exc
        if seeds.deflated:
            warnings.append(f"sector {s}: {seeds.deflated} dependent seed vector(s) deflated")
        for ev in tri.events:
            if not ev.startswith("breakdown"):
                warnings.append(f"sector {s}: {ev}")
        info.update(
            requested_length=int(length),
            length=tri.length,
            width=tri.width,
            deflated=seeds.deflated,
            events=list(tri.events),
            hopping_bound=tri.hopping_bound(),
        )
        diag["sectors"][s] = info
        strips[s] = SectorStrip(s, tri, seeds, owners)

    lefts = [strips[s] for s in left if s in strips]
    rights = [strips[s] for s in right if s in strips]
    if not rights:  # only possible for unusual couplings; fall back to one half
        rights, lefts = lefts, []
    if not rights:
        # no emitter couples to any mode (g = 0): the chain is the emitters alone
        warnings.append("no bath coupling: chain holds the emitter sites only")
        sites = [Site("emitter", e.dim, label=e.name) for e in emitters.effective_sites()]
        onsite = [OnSite(i, emitters.omega - frame, "Pi") for i in range(len(sites))]
        layout = ChainLayout(sites, [], onsite, list(range(len(sites))), frame, n_max)
        diag["chain_sites"] = layout.n_sites
        return Model(spec, emitters, layout, strips, diag, warnings, timings)
    try:
        layout = ladder_to_chain(emitters.effective_sites(), rights, lefts, emitters.omega, frame, n_max)
    except (ValueError, AssertionError) as exc:
        raise StageError("chainmap", str(exc)) from exc
    diag["chain_sites"] = layout.n_sites
    diag["bath_max_range"] = layout.bath_max_range
    diag["max_range"] = layout.max_range
    return Model(spec, emitters, layout, strips, diag, warnings, timings)


@dataclass
class RunResult:
    rows: list[Observables]
    state: MpsState
    gates: GateSet
    model: Model


def run_model(
    model: Model,
    init: InitialState,
    dt: float,
    max_bond: int,
    t_final: float,
    record_every: int = 10,
    trunc_budget: float = 1e-8,
) -> RunResult:
    with _Timer(model.timings, "gates"):
        gates = build_gate_mpos(model.layout, dt)
    model.diagnostics["n_mpos"] = gates.n_sets
    state = initial_mps(model.layout, init, max_bond)
    first = model.emitters.effective_sites()[0].size
    target = bound_state_target(model.emitters)
    with _Timer(model.timings, "evolution"):
        rows = evolve(state, model.layout, gates, t_final, first, target, record_every, max_bond, trunc_budget)
    return RunResult(rows, state, gates, model)
