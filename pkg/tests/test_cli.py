import json

import pytest

from dichotomy_lab.cli import load_scenario, run
from dichotomy_lab.errors import ConfigError

SMALL = {
    "name": "small exponential model",
    "seed": 1,
    "rate": {"kind": "exponential"},
    "system": {
        "kind": "model",
        "P": [[1.0, 0.0], [0.0, 0.0]],
        "lam": {"kind": "constant", "params": [1.0]},
        "D": {"kind": "constant", "params": [2.0]},
        "K": {"kind": "point_hashed", "params": [1.0, 3.0], "salt": "K"},
    },
    "grid": {"orbits": 2, "ell_max": 4, "horizon": 12, "seed": 0},
    "lemma": {"alphas": [0.5, 2.0], "s_max": 8, "r_max": 200, "r_count": 8},
    "admissibility": {"probes": 4},
    "robustness": {"count": 3, "refit": True},
    "norm": {"nu": {"kind": "polynomial"}, "epsilon": 0.2},
}

COMMANDS = [("lemma-check", []), ("verify-dichotomy", []), ("solve-admissibility", []),
            ("robustness-sweep", []), ("norm-equivalence", ["--direction", "roundtrip"]),
            ("norm-equivalence", ["--direction", "backward"]), ("derive-exponents", [])]


def write(tmp_path, data, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def invoke(tmp_path, command, extra, cfg, tag=""):
    out = tmp_path / f"{command}{tag}.csv"
    code = run([command, "--config", str(cfg), "--out", str(out), *extra])
    return code, out


@pytest.mark.parametrize("command, extra", COMMANDS)
def test_subcommands_are_deterministic(tmp_path, command, extra):
    cfg = write(tmp_path, SMALL)
    code, out = invoke(tmp_path, command, extra, cfg, "a")
    assert code == 0
    code, again = invoke(tmp_path, command, extra, cfg, "b")
    assert code == 0
    assert out.read_bytes() == again.read_bytes()
    m1 = json.loads((tmp_path / (out.name + ".manifest.json")).read_text())
    m2 = json.loads((tmp_path / (again.name + ".manifest.json")).read_text())
    assert m1["outputs"][out.name] == m2["outputs"][again.name]
    assert m1["config_sha256"] == m2["config_sha256"]
    assert m1["summary"] == m2["summary"]
    header = out.read_text().splitlines()[0]
    assert "," in header


def test_manifest_contents(tmp_path):
    cfg = write(tmp_path, SMALL)
    code, out = invoke(tmp_path, "verify-dichotomy", ["--horizon", "8", "--seed", "5"], cfg)
    assert code == 0
    m = json.loads((tmp_path / (out.name + ".manifest.json")).read_text())
    assert m["subcommand"] == "verify-dichotomy"
    assert m["scenario"]["grid"]["horizon"] == 8
    assert m["seeds"]["scenario"] == 5
    assert m["options"] == {"horizon": 8, "seed": 5}
    assert set(m["versions"]) == {"python", "numpy", "scipy", "package"}
    assert m["summary"]["passed"] is True
    assert "time" not in json.dumps(m).lower()


def test_admissibility_input_file(tmp_path):
    from dichotomy_lab import SignalGrid
    from dichotomy_lab.cli import build
    sc, _ = load_scenario(write(tmp_path, SMALL))
    b = build(sc)
    y = SignalGrid.impulse(b.points, b.horizon, b.cert.norm, 0, 3, [1.0, -1.0])
    sig = tmp_path / "signal.json"
    sig.write_text(json.dumps(y.to_json()))
    code, out = invoke(tmp_path, "solve-admissibility", ["--input", str(sig)], write(tmp_path, SMALL))
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0].split(",")[:3] == ["point_id", "ell", "n"]
    m = json.loads((tmp_path / (out.name + ".manifest.json")).read_text())
    assert m["input_sha256"] is not None


@pytest.mark.parametrize("patch, path", [
    ({"rate": {"kind": "cubic"}}, "rate.kind"),
    ({"grid": {"orbits": 0}}, "grid.orbits"),
    ({"grid": {"colour": 1}}, "grid.colour"),
    ({"robustness": {"rho_margin": 1.5}}, "robustness.rho_margin"),
    ({"system": dict(SMALL["system"], lam={"kind": "point_hashed", "params": [1, 2]})},
     "system.lam.kind"),
])
def test_config_errors(tmp_path, capsys, patch, path):
    data = dict(SMALL, **patch)
    cfg = write(tmp_path, data)
    with pytest.raises(ConfigError) as info:
        load_scenario(cfg)
    assert info.value.path == path
    code, out = invoke(tmp_path, "verify-dichotomy", [], cfg)
    assert code == 2
    assert not out.exists()
    assert not (tmp_path / (out.name + ".manifest.json")).exists()
    assert path in capsys.readouterr().err


def test_missing_and_malformed_files(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["lemma-check", "--config", str(bad), "--out", str(tmp_path / "x.csv")]) == 2
    assert run(["lemma-check", "--config", str(tmp_path / "none.json"),
                "--out", str(tmp_path / "x.csv")]) == 2
    assert not (tmp_path / "x.csv").exists()


def test_domain_error_exit_code(tmp_path):
    data = dict(SMALL, rate={"kind": "logarithmic"})
    code, out = invoke(tmp_path, "derive-exponents", [], write(tmp_path, data))
    assert code == 6
    assert not out.exists()
