import csv
import json

import pytest

from shadowtorus.cli import main, parse_config, report
from shadowtorus.errors import ConfigError, MissingArtifacts

LIN = {"system": {"variant": "Linear", "r": 0.0}}
FAST_SHADOW = dict(LIN, params={"delta1": 0.01, "delta2": 0.01, "Delta": 0.03, "d": 0.002, "m": 20, "trials": 2})


def write(tmp_path, doc, name="cfg.json"):
    f = tmp_path / name
    f.write_text(json.dumps(doc))
    return str(f)


def test_simulate_row_count(tmp_path):
    cfg = write(tmp_path, dict(LIN, params={"m": 100}))
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = list(csv.reader(open(tmp_path / "o" / "pseudotrajectory.csv")))
    assert rows[0] == ["k", "x", "y"] and len(rows) == 102


def test_check_conditions_linear_defaults(tmp_path):
    cfg = write(tmp_path, LIN)
    assert main(["check-conditions", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o" / "conditions.json").read_text())
    assert [r["condition"] for r in doc["reports"]] == ["C5", "C6", "C7", "C8", "C9"]
    assert all(r["min_margin"] > 0 for r in doc["reports"])
    echo = json.loads((tmp_path / "o" / "config_check-conditions.json").read_text())
    assert echo["params"] == {"delta1": 0.01, "delta2": 0.01, "Delta": 0.03}
    assert "params.Delta" in echo["defaulted"]


def test_missing_variant_names_field(tmp_path, capsys):
    cfg = write(tmp_path, {"system": {"r": 0.05}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "system.variant" in capsys.readouterr().err


def test_usage_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"system": {"variant": "Linear"},\n "params": {"m": }}')
    assert main(["simulate", "--config", str(bad)]) == 1
    assert "line 2" in capsys.readouterr().err
    assert main(["simulate", "--config", write(tmp_path, dict(LIN, params={"mm": 3}))]) == 1
    assert "params.mm" in capsys.readouterr().err
    assert main(["simulate", "--config", write(tmp_path, dict(LIN, params={"m": -3}))]) == 1
    assert main(["simulate"]) == 1
    assert main(["no-such-task"]) == 1
    with pytest.raises(ConfigError) as exc:
        parse_config({"system": {"variant": "Linear"}, "params": {"delta1": 0.01}}, task="shadow")
    assert exc.value.field == "params.delta1"


def test_flags_override_and_env(tmp_path, monkeypatch):
    monkeypatch.setenv("SHADOWTORUS_OUT", str(tmp_path / "env_out"))
    cfg = parse_config(dict(LIN, seed=3, emit_svg=False), task="simulate")
    assert cfg.out == str(tmp_path / "env_out") and cfg.seed == 3
    cfg = parse_config(dict(LIN, seed=3, out="x"), task="simulate", seed=9, out="y", emit_svg=True)
    assert (cfg.seed, cfg.out, cfg.emit_svg) == (9, "y", True)


def test_shadow_report_and_determinism(tmp_path):
    cfg = write(tmp_path, FAST_SHADOW)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["shadow", "--config", cfg, "--out", str(a), "--svg", "--seed", "4"]) == 0
    assert main(["shadow", "--config", cfg, "--out", str(b), "--svg", "--seed", "4"]) == 0
    for name in ("shadow_runs.json", "shadow_distances.csv", "shadow_000.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    summary = report(a)
    assert len(summary["rows"]) == 1 and summary["rows"][0][0] == "shadow_runs.json"
    # echo round trip
    c = tmp_path / "c"
    assert main(["shadow", "--config", str(a / "config_shadow.json"), "--out", str(c), "--svg"]) == 0
    assert (a / "shadow_runs.json").read_bytes() == (c / "shadow_runs.json").read_bytes()
    # a different seed keeps the schema
    d = tmp_path / "d"
    assert main(["shadow", "--config", cfg, "--out", str(d), "--seed", "5"]) == 0
    assert report(d)["columns"] == summary["columns"]
    assert main(["report", "--out", str(a)]) == 0
    assert (a / "summary.csv").exists()
    manifest = json.loads((a / "manifest.json").read_text())
    assert "shadow_runs.json" in manifest["shadow"]


def test_shadow_failure_exit_code(tmp_path):
    doc = dict(LIN, params={"delta1": 0.01, "delta2": 0.01, "d": 0.05, "m": 20})
    assert main(["shadow", "--config", write(tmp_path, doc), "--out", str(tmp_path / "o")]) == 2
    runs = json.loads((tmp_path / "o" / "shadow_runs.json").read_text())
    assert runs["success_rate"] < 1


def test_report_empty_dir(tmp_path):
    with pytest.raises(MissingArtifacts):
        report(tmp_path)
    assert main(["report", "--out", str(tmp_path)]) == 1


def test_derive_chain_and_stability(tmp_path):
    out = tmp_path / "o"
    assert main(["derive-chain", "--config", write(tmp_path, dict(LIN, params={"eps": 0.1})), "--out", str(out)]) == 0
    ch = json.loads((out / "chain.json").read_text())
    assert ch["passed"] and ch["d"] > 0
    doc = dict(LIN, params={"eps": 0.1, "delta1": ch["delta1"], "delta2": ch["delta2"], "d": ch["d"],
                            "grid_n": 2, "K": 3, "n_pairs": 200, "K_expansivity": 10})
    assert main(["stability", "--config", write(tmp_path, doc, "s.json"), "--out", str(out)]) == 0
    st = json.loads((out / "stability.json").read_text())
    assert st["passed"] and st["expansivity"]["a_est"] > 0
    assert len((out / "conjugacy.csv").read_text().splitlines()) == 5
    rows = report(out)["rows"]
    assert [r[0] for r in rows] == ["chain.json", "stability.json"]
