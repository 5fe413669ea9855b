import json
import os
import subprocess
import sys

import jsonschema
import pytest
from hypothesis import given, settings, strategies as st

from neurofield.cli import main
from neurofield.config import (
    ExperimentSpec, SpecError, model_from_dict, model_to_dict, parse_config, parse_spec_text,
    spec_to_text,
)
from neurofield.experiments import (
    KINDS, MANIFEST_SCHEMA, ExperimentError, read_csv, resolve_params, run_experiment,
)
from neurofield.model import ConfigError, GridSpec, preset

# small runs of every kind: (model overrides, params)
SMALL = {
    "raster": ({"preset": "REG2", "rows": 2, "cols": 2}, {"duration_ms": 50.0}),
    "rate-sweep": ({"rows": 1, "cols": 2}, {"presets": ["HOM"], "lambdas": [1000.0, 2000.0],
                                            "duration_ms": 300.0, "burn_in_ms": 100.0}),
    "meanfield-compare": ({"rows": 2, "cols": 2}, {"presets": ["HOM", "SYN"], "duration_ms": 300.0,
                                                   "burn_in_ms": 100.0}),
    "miss-fractions": ({"rows": 2, "cols": 2}, {"presets": ["REG1"], "duration_ms": 300.0,
                                                "burn_in_ms": 100.0}),
    "correlation-decay": ({"rows": 1, "cols": 4}, {"presets": ["REG2"], "trajectories": 2,
                                                   "windows": 20, "burn_in_ms": 100.0}),
    "mfe-sweep": ({}, {"tau_is": [1.0, 3.0], "dt": 0.01}),
    "mfe-two-pop": ({}, {"tau_is": [3.0, 9.0], "dt": 0.01}),
    "cv-sweep": ({}, {"tau_is": [2.0, 8.0], "repeats": 4, "branching_samples": 1000}),
    "limit-theorem-check": ({}, {}),
}

EXPECTED_FILES = {
    "raster": ["spikes.csv", "accounting.csv", "rates.csv"],
    "rate-sweep": ["rates_vs_lambda.csv"],
    "meanfield-compare": ["meanfield.csv", "meanfield_rel.csv"],
    "miss-fractions": ["miss.csv", "delta_f.csv"],
    "correlation-decay": ["cordecay.csv"],
    "mfe-sweep": ["mfe_sweep.csv"],
    "mfe-two-pop": ["mfe_grid.csv"],
    "cv-sweep": ["cv_vs_tau_i.csv", "branching.csv"],
    "limit-theorem-check": ["limit_theorem.csv"],
}


def small_spec(kind, seed=3):
    model, params = SMALL[kind]
    return ExperimentSpec(kind=kind, seed=seed, model=dict(model), params=dict(params))


def test_minimal_spec_fills_defaults():
    spec = parse_spec_text("kind: raster\nseed: 4\n")
    assert spec.scale == "desk" and spec.model == {} and spec.params == {}
    assert resolve_params(spec)["duration_ms"] == KINDS["raster"]["duration_ms"][0]
    paper = parse_spec_text("kind: cv-sweep\nseed: 4\nscale: paper\n")
    assert resolve_params(paper)["repeats"] == 10000


def test_seed_required():
    with pytest.raises(SpecError, match="seed") as exc:
        parse_spec_text("kind: raster\n")
    assert exc.value.key == "seed"


@pytest.mark.parametrize("text, key, line", [
    ("kind: raster\nseed: 1\ncolour: red\n", "colour", 3),
    ("kind: raster\nseed: 1\nmodel:\n  preset: REG2\n  tau_x: 3\n", "tau_x", 5),
    ("kind: raster\nseed: 1\nparams:\n  duration_ms: 10\n  windows: 3\n", "windows", 5),
    ("kind: nonsense\nseed: 1\n", "kind", 1),
    ("kind: raster\nseed: -2\n", "seed", 2),
    ("kind: raster\nseed: 1\nscale: huge\n", "scale", 3),
])
def test_errors_name_key_and_line(text, key, line):
    with pytest.raises(SpecError) as exc:
        parse_spec_text(text)
    assert exc.value.key == key and exc.value.line == line
    assert key in str(exc.value) or key == "seed"


def test_invalid_values_rejected():
    for text in ("kind: raster\nseed: 1\nparams:\n  duration_ms: -5\n",
                 "kind: rate-sweep\nseed: 1\nparams:\n  presets: [FOO]\n",
                 "kind: raster\nseed: 1\nmodel:\n  preset: REG2\n  n_e: -1\n",
                 "kind: raster\nseed: [\n"):
        with pytest.raises(SpecError):
            parse_spec_text(text)


@pytest.mark.parametrize("kind", list(KINDS))
def test_spec_round_trip(kind):
    spec = small_spec(kind)
    spec.out = "somewhere"
    again = parse_spec_text(spec_to_text(spec))
    assert again == spec
    assert spec_to_text(again) == spec_to_text(spec)


@pytest.mark.parametrize("name", ["HOM", "SYN", "REG1", "REG2", "REG3"])
def test_model_dict_round_trip(name):
    cfg = preset(name, 4000, GridSpec(2, 3))
    assert model_from_dict(model_to_dict(cfg)) == cfg


def test_model_dict_overrides():
    cfg = model_from_dict({"preset": "REG2", "rows": 1, "cols": 22, "tau_i": 7.0, "p_ie": 0.4})
    assert cfg.grid == GridSpec(1, 22) and cfg.time.tau_i == 7.0
    assert cfg.synapse.p_local[1][0] == 0.4
    plain = model_from_dict({"tau_ee": 2.0, "tau_ie": 2.0, "tau_i": 4.0, "lambda_e": 3000.0})
    assert plain.grid == GridSpec(1, 1) and plain.drive.lambda_i == ((3000.0,),)
    with pytest.raises(ConfigError):
        model_from_dict({"tau_ee": 2.0})
    with pytest.raises(ConfigError):
        model_from_dict({"preset": "HOM", "rows": 2, "cols": 2, "lambda_e": [[1, 2, 3]]})


@settings(max_examples=25)
@given(st.integers(1, 4), st.integers(1, 4), st.floats(0, 9000), st.floats(0.5, 9),
       st.sampled_from(["HOM", "SYN", "REG1", "REG2", "REG3"]))
def test_model_round_trip_random(rows, cols, lam, tau_i, name):
    cfg = model_from_dict({"preset": name, "rows": rows, "cols": cols, "lambda_even": lam, "tau_i": tau_i})
    assert model_from_dict(model_to_dict(cfg)) == cfg


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    out = {}
    for kind in KINDS:
        d = root / kind
        out[kind] = (d, run_experiment(small_spec(kind), d))
    return out


@pytest.mark.parametrize("kind", list(KINDS))
def test_manifest_and_csvs(runs, kind):
    d, manifest = runs[kind]
    jsonschema.validate(manifest, MANIFEST_SCHEMA)
    on_disk = json.loads((d / "manifest.json").read_text())
    jsonschema.validate(on_disk, MANIFEST_SCHEMA)
    assert [o["file"] for o in manifest["outputs"]] == EXPECTED_FILES[kind]
    for entry in manifest["outputs"]:
        rows = (d / entry["file"]).read_text().splitlines()
        assert rows[0].split(",") == entry["columns"]
        assert len(rows) - 1 == entry["rows"]


@pytest.mark.parametrize("kind", list(KINDS))
def test_rerun_is_byte_identical(runs, kind, tmp_path, monkeypatch):
    d, manifest = runs[kind]
    monkeypatch.setenv("NEUROFIELD_WORKERS", "2")
    again = run_experiment(small_spec(kind), tmp_path)
    for a, b in zip(manifest["outputs"], again["outputs"]):
        assert (d / a["file"]).read_bytes() == (tmp_path / b["file"]).read_bytes()
        assert a["sha256"] == b["sha256"]


def test_seed_changes_stochastic_output(runs, tmp_path):
    d, _ = runs["raster"]
    run_experiment(small_spec("raster", seed=4), tmp_path)
    assert (d / "spikes.csv").read_bytes() != (tmp_path / "spikes.csv").read_bytes()


def test_rate_sweep_rows(runs):
    rows = read_csv(runs["rate-sweep"][0] / "rates_vs_lambda.csv")
    assert len(rows) == 1 * 2 * 2
    assert {r["type"] for r in rows} == {"E", "I"}


def test_sweep_rejects_preset_model(tmp_path):
    spec = ExperimentSpec("rate-sweep", 1, model={"preset": "HOM"}, params={"presets": ["HOM"]})
    with pytest.raises(ConfigError):
        run_experiment(spec, tmp_path)


def test_module_errors_carry_context(tmp_path):
    spec = ExperimentSpec("limit-theorem-check", 1, params={"c_e": 0.01, "c_i": 0.01})
    with pytest.raises(ExperimentError, match="limit-theorem-check"):
        run_experiment(spec, tmp_path)


def write(tmp_path, text, name="spec.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_cli_run_and_overrides(tmp_path, capsys):
    spec = write(tmp_path, "kind: mfe-sweep\nseed: 2\nparams:\n  tau_is: [1.0, 2.0]\n  dt: 0.01\n")
    out = tmp_path / "out"
    assert main(["run", str(spec), "--seed", "9", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 9 and manifest["scale"] == "desk"
    assert "mfe_sweep.csv" in capsys.readouterr().out
    assert parse_config(spec).seed == 2


def test_cli_errors_are_json(tmp_path, capsys):
    bad = write(tmp_path, "kind: raster\nseed: 1\nmodel:\n  preset: REG2\n  bogus: 1\n")
    assert main(["run", str(bad)]) == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "spec" and err["line"] == 5 and err["key"] == "bogus"
    assert main(["run", str(tmp_path / "missing.yaml")]) == 1
    assert json.loads(capsys.readouterr().err.strip())["error"] == "io"
    assert main(["frobnicate"]) == 2
    assert json.loads(capsys.readouterr().err.strip())["error"] == "usage"
    assert main(["preset", "REG2"]) == 2
    capsys.readouterr()


def test_cli_preset_print(capsys):
    assert main(["preset", "reg3", "--print", "--rows", "1", "--cols", "2"]) == 0
    text = capsys.readouterr().out
    import yaml
    cfg = model_from_dict(yaml.safe_load(text))
    assert cfg == preset("REG3", 6000, GridSpec(1, 2))


def test_cli_kinds(capsys):
    assert main(["kinds"]) == 0
    assert capsys.readouterr().out.count("\n") == len(KINDS)


def test_console_script_subprocess(tmp_path):
    bad = write(tmp_path, "kind: raster\n")
    env = dict(os.environ, NEUROFIELD_WORKERS="1")
    res = subprocess.run([sys.executable, "-m", "neurofield.cli", "run", str(bad)],
                         capture_output=True, text=True, env=env)
    assert res.returncode == 1
    assert json.loads(res.stderr.strip().splitlines()[-1])["key"] == "seed"
    res = subprocess.run([sys.executable, "-m", "neurofield.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "neurofield" in res.stdout
