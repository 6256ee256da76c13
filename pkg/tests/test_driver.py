import json

import numpy as np
import pytest
import yaml

from stripsim.driver import ConfigError, load_config
from stripsim.driver.cli import main
from stripsim.driver.config import apply_overrides, from_dict
from stripsim.driver.run import converge, read_csv, run, sweep

SMALL = {
    "bath": {"L": 5},
    "emitters": {"kind": "diagonal", "N_e": 2, "omega": -1.0, "g": 0.3},
    "window": "disabled",
    "evolution": {"delta": 0.1, "D": 8, "t_final": 1.0, "record_every": 2},
}
HEADER = "t,C,C1,fidelity,norm,total_excitations,max_bond_dim,trunc_weight"


def _write(tmp_path, raw, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw))
    return p


def _with(**sections):
    raw = json.loads(json.dumps(SMALL))
    for sec, vals in sections.items():
        if isinstance(vals, dict) and isinstance(raw.get(sec), dict):
            raw[sec].update(vals)
        else:
            raw[sec] = vals
    return raw


@pytest.mark.parametrize(
    "patch",
    [
        {"bath": {"L": 4}},
        {"bath": {"L": 1}},
        {"evolution": {"delta": 0.0}},
        {"evolution": {"delta": -0.1}},
        {"evolution": {"D": 1}},
        {"evolution": {"t_final": 1.05}},
        {"evolution": {"bogus": 1}},
        {"window": {"disabled": True, "alpha": 4.0}},
        {"window": {"alpha": -1.0}},
        {"mapping": {"L_trunc": {"+0": 3}}},
        {"emitters": {"kind": "hexagon"}},
    ],
)
def test_invalid_configs_rejected(patch):
    with pytest.raises(ConfigError):
        cfg = from_dict(_with(**patch))
        # emitter-level errors surface when the physical objects are built
        from stripsim.driver.run import physical_objects

        physical_objects(cfg)


def test_unknown_top_level_key():
    with pytest.raises(ConfigError, match="unknown top-level"):
        from_dict({**SMALL, "extra": 1})


def test_aliases_and_overrides(tmp_path):
    raw = _with(emitters={"Omega": -2.0, "Ne": 2}, evolution={"δ": 0.05, "t_final": 0.5})
    raw["emitters"].pop("omega")
    raw["emitters"].pop("N_e")
    raw["evolution"].pop("delta")
    cfg = load_config(_write(tmp_path, raw), ["evolution.D=12", "window.alpha=3"])
    assert cfg.emitters.omega == -2.0 and cfg.emitters.N_e == 2
    assert cfg.evolution.delta == 0.05 and cfg.evolution.D == 12
    assert cfg.window.alpha == 3.0
    with pytest.raises(ConfigError):
        apply_overrides({}, ["no-equals-sign"])


def test_csv_header_and_line_endings(tmp_path):
    run(from_dict(SMALL), tmp_path)
    data = (tmp_path / "timeseries.csv").read_bytes()
    assert b"\r" not in data
    lines = data.decode().split("\n")
    assert lines[0] == HEADER
    assert lines[-1] == ""
    assert len(lines) - 2 == 6  # t = 0, 0.2, ..., 1.0
    cols = read_csv(tmp_path / "timeseries.csv")
    np.testing.assert_allclose(cols["t"], np.linspace(0, 1, 6), atol=1e-12)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    for key in ("config", "resolved", "code_version", "diagnostics", "warnings", "timings_s"):
        assert key in manifest


def test_reruns_byte_identical(tmp_path):
    cfg = from_dict(SMALL)
    run(cfg, tmp_path / "a")
    run(cfg, tmp_path / "b")
    assert (tmp_path / "a" / "timeseries.csv").read_bytes() == (tmp_path / "b" / "timeseries.csv").read_bytes()


def test_zero_final_time_gives_initial_record():
    out = run(from_dict(_with(evolution={"t_final": 0.0})), write=False)
    assert len(out.rows) == 1
    r = out.rows[0]
    assert r.t == 0.0
    # default initial state: one excitation shared symmetrically by the pair
    assert r.C == pytest.approx(1.0, abs=1e-12)
    assert np.isnan(r.fidelity)  # no target state for the diagonal kind
    assert r.norm == pytest.approx(1.0, abs=1e-12)
    assert r.total_excitations == pytest.approx(1.0, abs=1e-12)
    assert r.trunc_weight == 0.0


def test_warnings_listed_once(tmp_path):
    cfg = from_dict(_with(evolution={"D": 2, "t_final": 2.0, "trunc_budget": 1e-14, "n_max": 2},
                         initial_state="all-excited"))
    out = run(cfg, write=False)
    msgs = out.manifest["warnings"]
    assert len(msgs) == len(set(msgs))
    trunc = [m for m in msgs if "trunc" in m]
    assert len(trunc) == 1


def test_cli_exit_codes(tmp_path, capsys):
    good = _write(tmp_path, SMALL)
    assert main(["run", "--config", str(good), "--out", str(tmp_path / "o")]) == 0
    assert "C=" in capsys.readouterr().out
    bad = _write(tmp_path, _with(evolution={"delta": -1.0}), "bad.yaml")
    assert main(["run", "--config", str(bad)]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 2
    # emitters placed outside a 3x3 lattice: rejected by the emitter stage
    far = _write(tmp_path, _with(bath={"L": 3}, emitters={"N_e": 6}), "far.yaml")
    assert main(["run", "--config", str(far), "--out", str(tmp_path / "f")]) in (2, 3)
    assert main(["validate", "--inject", "non-hermitian-bath", "--out", str(tmp_path / "v")]) == 4
    report = json.loads((tmp_path / "v" / "validate.json").read_text())
    assert any(not r["ok"] and r["module"] == "bath" for r in report)


def test_cli_numeric_failure(tmp_path, monkeypatch):
    from stripsim.driver import run as runner
    from stripsim.numerics import NotHermitianError

    def boom(*a, **k):
        raise NotHermitianError(1.0, 1.0)

    monkeypatch.setattr(runner, "run", boom)
    good = _write(tmp_path, SMALL)
    assert main(["run", "--config", str(good)]) == 3


def test_converge_l_trunc_exhausted_chain(tmp_path):
    cfg = from_dict(_with(window={"alpha": 4.0}))
    rep = converge(cfg, "L_trunc", tmp_path)
    assert rep["status"] == "ok"
    assert rep["deviation"]["C"] < 1e-6
    assert (tmp_path / "converge.json").exists()
    assert (tmp_path / "base" / "timeseries.csv").exists()
    assert (tmp_path / "refined" / "timeseries.csv").exists()


def test_converge_alpha_full_band(tmp_path):
    # alpha * g = 30 already covers the whole band of width 8J
    cfg = from_dict(_with(window={"alpha": 100.0}))
    rep = converge(cfg, "alpha", write=False)
    assert rep["status"] == "ok"
    assert rep["deviation"]["C"] == pytest.approx(0.0, abs=1e-12)


def test_converge_infeasible_reported(tmp_path):
    cfg = from_dict(_with(evolution={"D": 4096}))
    rep = converge(cfg, "D", tmp_path)
    assert rep["status"] == "infeasible"
    assert "GB" in rep["reason"]
    assert not (tmp_path / "base").exists()
    good = _write(tmp_path, _with(evolution={"D": 4096}))
    assert main(["converge", "--config", str(good), "--knob", "D", "--out", str(tmp_path / "c")]) == 3


def test_sweep_outputs(tmp_path):
    res = sweep(from_dict(SMALL), "evolution.D", ["4", "8"], tmp_path)
    assert [r["dir"] for r in res] == ["D=4", "D=8"]
    for r in res:
        assert (tmp_path / r["dir"] / "timeseries.csv").exists()
    summary = json.loads((tmp_path / "sweep.json").read_text())
    assert len(summary) == 2 and "C" in summary[0]["final"]
