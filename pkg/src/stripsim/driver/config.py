"""Run configuration: YAML document -> validated ``RunConfig``."""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class BathConfig:
    L: int = 101
    J: float = 1.0


@dataclass
class EmitterSection:
    kind: str = "diagonal"
    N_e: int = 2
    omega: float = -3.95
    g: float = 0.05


@dataclass
class WindowConfig:
    alpha: float | None = 4.0  # None: full band, no energy truncation


@dataclass
class MappingConfig:
    L_trunc: dict[str, int] = field(default_factory=dict)  # BL blocks per sector; missing -> light cone
    safety: float = 1.5


@dataclass
class EvolutionConfig:
    delta: float = 0.4
    D: int = 10
    n_max: int | None = None  # None -> min(initial excitations, 3)
    t_final: float = 150.0
    record_every: int = 10
    trunc_budget: float = 1e-8


@dataclass
class InitialConfig:
    kind: str = "symmetric-single-excitation"
    sites: list | None = None  # per effective site amplitudes for custom-product


@dataclass
class OracleConfig:
    single_excitation: bool = False
    small_system: bool = False
    markov: bool = False
    markov_eta: float | None = None  # None -> calibrate against the exact single-emitter decay


@dataclass
class RunConfig:
    bath: BathConfig = field(default_factory=BathConfig)
    emitters: EmitterSection = field(default_factory=EmitterSection)
    window: WindowConfig = field(default_factory=WindowConfig)
    mapping: MappingConfig = field(default_factory=MappingConfig)
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    initial_state: InitialConfig = field(default_factory=InitialConfig)
    output: str = "out"
    oracles: OracleConfig = field(default_factory=OracleConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> "RunConfig":
        b, e, w, m, ev = self.bath, self.emitters, self.window, self.mapping, self.evolution
        for name, val in (("bath.J", b.J), ("emitters.omega", e.omega), ("emitters.g", e.g),
                          ("evolution.delta", ev.delta), ("evolution.t_final", ev.t_final),
                          ("mapping.safety", m.safety)):
            if not isinstance(val, (int, float)) or not math.isfinite(val):
                raise ConfigError(f"{name} must be a finite number, got {val!r}")
        if not isinstance(b.L, int) or b.L < 3 or b.L % 2 == 0:
            raise ConfigError(f"bath.L must be an odd integer >= 3, got {b.L!r}")
        if b.J <= 0:
            raise ConfigError("bath.J must be positive")
        if ev.delta <= 0:
            raise ConfigError("evolution.delta must be > 0")
        if not isinstance(ev.D, int) or ev.D < 2:
            raise ConfigError("evolution.D must be an integer >= 2")
        if ev.t_final < 0:
            raise ConfigError("evolution.t_final must be >= 0")
        n_steps = round(ev.t_final / ev.delta)
        if not math.isclose(n_steps * ev.delta, ev.t_final, rel_tol=1e-9, abs_tol=1e-12):
            raise ConfigError(f"evolution.t_final={ev.t_final} is not a multiple of delta={ev.delta}")
        if not isinstance(ev.record_every, int) or ev.record_every < 1:
            raise ConfigError("evolution.record_every must be a positive integer")
        if ev.n_max is not None and (not isinstance(ev.n_max, int) or ev.n_max < 1):
            raise ConfigError("evolution.n_max must be a positive integer")
        if w.alpha is not None and (not isinstance(w.alpha, (int, float)) or not w.alpha > 0):
            raise ConfigError(f"window.alpha must be positive or the window disabled, got {w.alpha!r}")
        for k, v in m.L_trunc.items():
            if k not in ("++", "+-", "-+", "--"):
                raise ConfigError(f"mapping.L_trunc has unknown sector {k!r}")
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"mapping.L_trunc[{k}] must be a positive integer")
        return self


_SECTIONS = {
    "bath": BathConfig,
    "emitters": EmitterSection,
    "window": WindowConfig,
    "mapping": MappingConfig,
    "evolution": EvolutionConfig,
    "initial_state": InitialConfig,
    "oracles": OracleConfig,
}
_ALIASES = {"Omega": "omega", "Ω": "omega", "α": "alpha", "δ": "delta", "Ne": "N_e"}


def _section(cls, raw, name):
    if raw is None:
        return cls()
    if name == "initial_state" and isinstance(raw, str):
        return InitialConfig(kind=raw)
    if name == "window":
        if raw is False or raw == "disabled":
            return WindowConfig(alpha=None)
        if isinstance(raw, dict) and raw.get("disabled"):
            if raw.get("alpha") is not None:
                raise ConfigError("window is disabled but alpha is given")
            return WindowConfig(alpha=None)
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = set(cls.__dataclass_fields__)
    kwargs = {}
    for k, v in raw.items():
        k = _ALIASES.get(k, k)
        if name == "window" and k == "disabled":
            continue
        if k not in known:
            raise ConfigError(f"unknown key {name}.{k}")
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"section {name!r}: {exc}") from exc


def _coerce(cfg: RunConfig) -> None:
    # YAML may hand back ints for floats or strings for numbers set via overrides
    b, e, ev = cfg.bath, cfg.emitters, cfg.evolution
    try:
        b.L = int(b.L) if float(b.L).is_integer() else b.L
        b.J = float(b.J)
        e.N_e = int(e.N_e)
        e.omega, e.g = float(e.omega), float(e.g)
        ev.delta, ev.t_final, ev.trunc_budget = float(ev.delta), float(ev.t_final), float(ev.trunc_budget)
        ev.D, ev.record_every = int(ev.D), int(ev.record_every)
        if ev.n_max is not None:
            ev.n_max = int(ev.n_max)
        if cfg.window.alpha is not None:
            cfg.window.alpha = float(cfg.window.alpha)
        cfg.mapping.safety = float(cfg.mapping.safety)
        cfg.mapping.L_trunc = {str(k): int(v) for k, v in (cfg.mapping.L_trunc or {}).items()}
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad numeric value: {exc}") from exc


def from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration root must be a mapping")
    unknown = set(raw) - set(_SECTIONS) - {"output"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    kwargs = {name: _section(cls, raw.get(name), name) for name, cls in _SECTIONS.items()}
    cfg = RunConfig(output=str(raw.get("output", "out")), **kwargs)
    _coerce(cfg)
    return cfg.validate()


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """``key.sub=value`` overrides; values are parsed as YAML scalars."""
    raw = copy.deepcopy(raw)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, val = item.partition("=")
        parts = key.strip().split(".")
        node = raw
        for p in parts[:-1]:
            nxt = node.get(p)
            if nxt is None:
                nxt = node[p] = {}
            elif node is raw and p == "window" and nxt in (False, "disabled"):
                nxt = node[p] = {}  # overriding a key re-enables a disabled window
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {key!r}: {p!r} is not a section")
            node = nxt
        try:
            node[parts[-1]] = yaml.safe_load(val)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {key!r}: {exc}") from exc
    return raw


def load_raw(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return raw or {}


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    raw = load_raw(path) if path else {}
    return from_dict(apply_overrides(raw, overrides or []))
