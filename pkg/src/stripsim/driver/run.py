"""Orchestration of single runs, sweeps and convergence checks, with CSV + manifest output."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..bath import BathSpec
from ..emitters import EmitterConfig, encode_initial_state
from ..oracles import OracleError, calibrate_eta, exact_single_excitation, exact_small_system, markov_lindblad
from ..tns import CSV_COLUMNS, Observables
from .config import ConfigError, RunConfig
from .pipeline import Model, StageError, build_model, run_model

log = logging.getLogger(__name__)

MEMORY_LIMIT_BYTES = 4 * 1024**3


class _WarningCollector(logging.Handler):
    """Captures warnings logged by any module during a run (deduplicated in order)."""

    def __init__(self):
        super().__init__(logging.WARNING)
        self.messages: list[str] = []

    def emit(self, record):
        msg = f"{record.name}: {record.getMessage()}"
        if msg not in self.messages:
            self.messages.append(msg)


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.15e}"


def write_csv(path, rows) -> None:
    """Header exactly as specified, '.' decimals and '\\n' line endings."""
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for r in rows:
            vals = r.row() if isinstance(r, Observables) else r
            fh.write(",".join(fmt(v) for v in vals) + "\n")


def read_csv(path) -> dict[str, np.ndarray]:
    data = np.genfromtxt(path, delimiter=",", names=True)
    return {c: np.atleast_1d(data[c]) for c in data.dtype.names}


def code_version() -> dict:
    h = hashlib.sha256()
    root = Path(__file__).resolve().parents[1]
    for p in sorted(root.rglob("*.py")):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(p.read_bytes())
    return {"package": __version__, "source_sha256": h.hexdigest()[:16], "python": platform.python_version(),
            "numpy": np.__version__}


def physical_objects(cfg: RunConfig):
    try:
        spec = BathSpec(cfg.bath.L, cfg.bath.J)
        em = EmitterConfig(cfg.emitters.kind, cfg.emitters.N_e, cfg.emitters.omega, cfg.emitters.g)
        init = encode_initial_state(cfg.initial_state.kind, em, cfg.initial_state.sites)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return spec, em, init


def resolved_n_max(cfg: RunConfig, excitations: int) -> int:
    if cfg.evolution.n_max is not None:
        return cfg.evolution.n_max
    return max(1, min(excitations, 3))


def memory_estimate(cfg: RunConfig, excitations: int) -> int:
    """Rough peak bytes: dense sector eigensolve plus MPS working set."""
    n = cfg.bath.L**2
    sector = n / 4 + cfg.bath.L
    eig = 2 * 8 * sector**2 if cfg.window.alpha is not None else 0
    d = resolved_n_max(cfg, excitations) + 1
    lengths = list(cfg.mapping.L_trunc.values()) or [n / 4]
    sites = 2 * max(lengths) + 8
    mps = 40 * sites * cfg.evolution.D**2 * d * 16
    return int(eig + mps)


@dataclass
class RunOutcome:
    rows: list[Observables]
    manifest: dict
    model: Model
    oracle_rows: dict[str, list] = field(default_factory=dict)


def _light_cone(model: Model, state) -> dict:
    """End-of-run occupation on the last rung of every strip cut short of exhaustion."""
    out = {}
    layout = model.layout
    for label, strip in model.strips.items():
        exhausted = any(e.startswith("breakdown") for e in strip.tri.events)
        last = strip.tri.length
        sites = [i for i, s in enumerate(layout.sites) if s.kind == "boson" and s.sector == label and s.block == last]
        occ = 0.0
        if sites:
            n_op = {i: np.diag(np.arange(layout.sites[i].dim, dtype=float)) for i in sites}
            occ = float(sum(v.real for v in state.expectations(n_op).values()))
        out[label] = {"blocks": last, "exhausted": exhausted, "end_occupation": occ,
                      "ok": bool(exhausted or occ < 1e-8)}
    return out


def run(cfg: RunConfig, out_dir=None, write: bool = True) -> RunOutcome:
    out = Path(out_dir or cfg.output)
    collector = _WarningCollector()
    root = logging.getLogger("stripsim")
    root.addHandler(collector)
    t_start = time.perf_counter()
    try:
        spec, em, init = physical_objects(cfg)
        n_max = resolved_n_max(cfg, init.excitations)
        ev = cfg.evolution
        model = build_model(spec, em, cfg.window.alpha, ev.t_final, n_max, cfg.mapping.L_trunc, cfg.mapping.safety)
        try:
            result = run_model(model, init, ev.delta, ev.D, ev.t_final, ev.record_every, ev.trunc_budget)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            raise StageError("tns", str(exc)) from exc
        rows = result.rows
        light = _light_cone(model, result.state)
        oracle_rows, oracle_info = _oracles(cfg, spec, em, init, rows)
    finally:
        root.removeHandler(collector)

    warnings = list(model.warnings)
    for kind, rec in result.state.flags.items():
        warnings.append(f"tns: {kind} in {rec['count']} application(s); first at t={rec['first_t']:.6g}, "
                        f"worst {rec['worst']:.3e}")
    for label, lc in light.items():
        if not lc["ok"]:
            warnings.append(f"light cone: sector {label} end occupation {lc['end_occupation']:.3e} after {lc['blocks']} blocks")
    flagged = ("truncation weight", "not converged", "nearly dependent")
    for msg in collector.messages:
        if not any(f in msg for f in flagged) and msg not in warnings:
            warnings.append(msg)

    manifest = {
        "config": cfg.to_dict(),
        "resolved": {"n_max": n_max, "excitations": init.excitations, "n_steps": int(round(ev.t_final / ev.delta))},
        "code_version": code_version(),
        "diagnostics": _jsonable(model.diagnostics),
        "light_cone": light,
        "oracles": oracle_info,
        "warnings": warnings,
        "timings_s": {**{k: round(v, 4) for k, v in model.timings.items()},
                      "total": round(time.perf_counter() - t_start, 4)},
    }
    outcome = RunOutcome(rows, manifest, model, oracle_rows)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "timeseries.csv", rows)
        for name, orows in oracle_rows.items():
            write_csv(out / f"oracle_{name}.csv", orows)
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return outcome


def _oracles(cfg, spec, em, init, rows):
    ts = np.array([r.t for r in rows])
    c_mps = np.array([r.C for r in rows])
    series, info = {}, {}
    oc = cfg.oracles
    try:
        if oc.single_excitation:
            s = exact_single_excitation(em, spec, init, ts)
            series["single_excitation"] = list(s.rows())
            info["single_excitation"] = {"max_abs_dC": float(np.max(np.abs(s.C - c_mps)))}
        if oc.small_system:
            s = exact_small_system(em, spec, init, ts)
            series["small_system"] = list(s.rows())
            info["small_system"] = {"max_abs_dC": float(np.max(np.abs(s.C - c_mps)))}
        if oc.markov:
            if oc.markov_eta is None:
                eta, g_exact, g_markov = calibrate_eta(em, spec)
                cal = {"eta": eta, "gamma_exact_fit": g_exact, "gamma_markov": g_markov, "calibrated": True}
            else:
                eta, cal = oc.markov_eta, {"eta": oc.markov_eta, "calibrated": False}
            s = markov_lindblad(em, spec, init, ts, eta)
            series["markov"] = list(s.rows())
            info["markov"] = {**cal, "max_abs_dC": float(np.max(np.abs(s.C - c_mps))), "heuristic": True}
    except OracleError as exc:
        raise StageError("oracles", str(exc)) from exc
    return series, info


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    return x


# ---------------------------------------------------------------- converge / sweep

KNOBS = ("delta", "D", "n_max", "L_trunc", "alpha")


def refine(cfg: RunConfig, knob: str, used_lengths: dict[str, int] | None = None) -> RunConfig:
    new = copy.deepcopy(cfg)
    if knob == "delta":
        new.evolution.delta = cfg.evolution.delta / 2
        new.evolution.record_every = cfg.evolution.record_every * 2
    elif knob == "D":
        new.evolution.D = cfg.evolution.D * 2
    elif knob == "n_max":
        _, _, init = physical_objects(cfg)
        new.evolution.n_max = resolved_n_max(cfg, init.excitations) + 1
    elif knob == "L_trunc":
        lengths = dict(used_lengths or {})
        lengths.update(cfg.mapping.L_trunc)
        new.mapping.L_trunc = {k: 2 * v for k, v in lengths.items()}
    elif knob == "alpha":
        if cfg.window.alpha is None:
            raise ConfigError("window is disabled: nothing to refine in alpha")
        new.window.alpha = cfg.window.alpha * 2
    else:
        raise ConfigError(f"unknown knob {knob!r}; choose from {KNOBS}")
    return new.validate()


def compare(rows_a: list[Observables], rows_b: list[Observables]) -> dict:
    """Max deviation over common record times, per observable."""
    ta = {round(r.t, 9): r for r in rows_a}
    common = [(ta[round(r.t, 9)], r) for r in rows_b if round(r.t, 9) in ta]
    out = {}
    for col in ("C", "C1", "fidelity", "total_excitations"):
        diffs = [abs(getattr(a, col) - getattr(b, col)) for a, b in common]
        diffs = [d for d in diffs if not math.isnan(d)]
        out[col] = max(diffs) if diffs else math.nan
    out["n_times"] = len(common)
    return out


def converge(cfg: RunConfig, knob: str, out_dir=None, write: bool = True) -> dict:
    """Base run plus one refined run; infeasible refinements are reported, not run."""
    out = Path(out_dir or cfg.output)
    _, _, init = physical_objects(cfg)
    need = memory_estimate(refine(cfg, knob, cfg.mapping.L_trunc), init.excitations)
    report = {"knob": knob, "memory_estimate_bytes": need}
    if need > MEMORY_LIMIT_BYTES:
        report.update(status="infeasible", base=_jsonable(_knob_value(cfg, knob, {})),
                      reason=f"refined run needs about {need / 1e9:.2f} GB, limit {MEMORY_LIMIT_BYTES / 1e9:.2f} GB")
    else:
        base = run(cfg, out / "base", write)
        used = {k: v["requested_length"] for k, v in base.manifest["diagnostics"]["sectors"].items()}
        fine_cfg = refine(cfg, knob, used)
        fine = run(fine_cfg, out / "refined", write)
        report.update(status="ok", base=_jsonable(_knob_value(cfg, knob, used)),
                      refined=_jsonable(_knob_value(fine_cfg, knob, used)),
                      deviation=compare(base.rows, fine.rows))
    if write:
        out.mkdir(parents=True, exist_ok=True)
        (out / "converge.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def _knob_value(cfg: RunConfig, knob: str, used):
    if knob == "delta":
        return cfg.evolution.delta
    if knob == "D":
        return cfg.evolution.D
    if knob == "n_max":
        return cfg.evolution.n_max
    if knob == "L_trunc":
        return cfg.mapping.L_trunc or used
    return cfg.window.alpha


def sweep(cfg: RunConfig, key: str, values: list, out_dir=None, write: bool = True) -> list[dict]:
    """Independent runs over ``key`` (dotted config path) taking each of ``values``."""
    from .config import apply_overrides, from_dict

    out = Path(out_dir or cfg.output)
    summary = []
    for v in values:
        raw = apply_overrides(cfg.to_dict(), [f"{key}={v}"])
        sub = from_dict(raw)
        name = f"{key.split('.')[-1]}={v}"
        res = run(sub, out / name, write)
        last = res.rows[-1]
        summary.append({"value": v, "dir": name, "final": dict(zip(CSV_COLUMNS, map(float, last.row())))})
    if write:
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary
