from .apply import ApplyReport, apply_mpo
from .evolution import CSV_COLUMNS, Observables, emitter_rdm, evolve, initial_mps, measure, trotter_step
from .gates import (
    GateMpo,
    GateSet,
    boson_operators,
    build_gate_mpos,
    color_intervals,
    dense_hamiltonian,
    single_excitation_block,
)
from .mps import MpsState

__all__ = [
    "ApplyReport",
    "CSV_COLUMNS",
    "GateMpo",
    "GateSet",
    "MpsState",
    "Observables",
    "apply_mpo",
    "boson_operators",
    "build_gate_mpos",
    "color_intervals",
    "dense_hamiltonian",
    "emitter_rdm",
    "evolve",
    "initial_mps",
    "measure",
    "single_excitation_block",
    "trotter_step",
]
