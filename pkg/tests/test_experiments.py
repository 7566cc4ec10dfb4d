import dataclasses
import json
import math
import subprocess
import sys

import numpy as np
import pytest
import yaml

from mvdecon.cli import main
from mvdecon.errors import ConfigError, SchemaError
from mvdecon.experiments import (ExperimentConfig, ExperimentResult, cell_seed, fit_rate, load, load_config,
                                 persist, report, run_convergence_study)

SMALL = dict(model="hermite", N_list=[100, 200], replicates=2, y_max=8.0, n_freq=512, grid=[-8.0, 8.0, 1025],
             seed0=3)


@pytest.fixture(scope="module")
def small_result():
    return run_convergence_study(ExperimentConfig.from_dict(SMALL))


def _write(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data) if name.endswith(".yaml") else json.dumps(data))
    return p


def test_fit_rate_examples():
    s, _, se = fit_rate([(100, 0.1), (400, 0.05), (1600, 0.025)])
    assert s == pytest.approx(-0.5, abs=1e-14) and se == pytest.approx(0.0, abs=1e-14)
    assert fit_rate([(10, 1), (100, 1)])[0] == 0.0
    with pytest.raises(ConfigError):
        fit_rate([(10, 1)])
    with pytest.raises(ConfigError):
        fit_rate([(10, 1), (100, 0)])


def test_config_validation_and_round_trip(tmp_path):
    cfg = ExperimentConfig.from_dict(SMALL)
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    assert load_config(_write(tmp_path, SMALL)) == cfg
    assert load_config(_write(tmp_path, SMALL, "cfg.json")) == cfg
    assert ExperimentConfig(mode="oracle").mode == "oracle_shift"
    for bad in ({"model": "nope"}, {"N_list": [200, 100]}, {"replicates": 0}, {"mode": "x"},
                {"T_rule": {"kind": "fixed"}}, {"unknown_key": 1}):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({**SMALL, **bad})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_horizon_rules(hermite):
    cfg = ExperimentConfig()
    assert cfg.horizon(hermite, 4000) == math.ceil(math.log(4000) / hermite.lam)
    fixed = dataclasses.replace(cfg, T_rule={"kind": "fixed", "value": 10})
    assert fixed.horizon(hermite, 4000) == 10.0


def test_cell_seeds_distinct():
    seeds = {cell_seed(0, N, r) for N in (500, 2000) for r in range(20)}
    assert len(seeds) == 40
    assert cell_seed(0, 500, 1) == cell_seed(0, 500, 1) != cell_seed(1, 500, 1)


def test_study_cells_and_summary(small_result):
    s = small_result.summary
    assert len(small_result.cells) == 4 and not s["failures"]
    assert s["floor_ok_all_cells"]
    assert set(s["medians"]["w1"]) == {"100", "200"}
    assert "w1" in s["slopes"] and s["slopes"]["wprime_l2_error"]["theory"] == pytest.approx(-s["gamma"]["gamma"] / 2)


def test_persist_load_round_trip(tmp_path, small_result):
    d = persist(small_result, tmp_path / "run")
    for name in ("config.json", "cells.csv", "summary.json"):
        assert (d / name).exists()
    back = load(d)
    assert back.config == small_result.config and back.summary == small_result.summary
    key = lambda c: (c["N"], c["replicate"])
    for a, b in zip(sorted(back.cells, key=key), sorted(small_result.cells, key=key)):
        assert a["seed"] == b["seed"] and a["metrics"] == b["metrics"]
    for k, art in small_result.artifacts.items():
        assert np.array_equal(back.artifacts[k]["psi"].values, art["psi"].values)


def test_load_errors(tmp_path, small_result):
    with pytest.raises(FileNotFoundError):
        load(tmp_path / "absent")
    d = persist(small_result, tmp_path / "run")
    summary = json.loads((d / "summary.json").read_text())
    summary["schema_version"] = 99
    (d / "summary.json").write_text(json.dumps(summary))
    with pytest.raises(SchemaError):
        load(d)


def test_replicate_determinism(tmp_path):
    cfg = ExperimentConfig.from_dict({**SMALL, "N_list": [100], "replicates": 1})
    a = persist(run_convergence_study(cfg), tmp_path / "a")
    b = persist(run_convergence_study(cfg), tmp_path / "b")
    for name in ("cells.csv", "summary.json", "cells/psi_N100_r0.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_failed_cell_is_recorded():
    cfg = ExperimentConfig.from_dict({**SMALL, "N_list": [50], "replicates": 1,
                                      "init": {"kind": "point", "value": 2e6}})
    res = run_convergence_study(cfg)
    assert res.summary["failures"] and "InstabilityError" in res.summary["failures"][0]["error"]
    assert "failed cell" in report(res)[0]


def test_report_formatting():
    res = ExperimentResult({}, [], {"model": "hermite", "medians": {}, "slopes": {
        "w1": {"slope": -0.48, "stderr": 0.01, "theory": -0.5, "band": [-0.8, -0.2]},
        "wprime_l2_error": {"slope": 0.03, "stderr": 0.2, "theory": -0.021, "band": None}}})
    text, table = report(res)
    assert "W1 slope -0.48 (theory -0.50): PASS band [-0.8,-0.2]" in text
    assert "W' L2 error slope 0.03 (theory -0.02): not resolvable at desk scale" in text
    assert "w1: no data (section omitted)" in text
    assert table == "metric,N,median,iqr\n"


def test_report_table(small_result):
    text, table = report(small_result)
    assert "gamma = " in text
    rows = table.splitlines()
    assert rows[0] == "metric,N,median,iqr" and any(r.startswith("w1,100,") for r in rows)


def test_cli_validate_and_exit_codes(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    assert main(["validate", str(cfg)]) == 0
    assert "lambda_positive: pass" in capsys.readouterr().out
    assert main(["validate", str(tmp_path / "missing.yaml")]) == 2
    bad = _write(tmp_path, {**SMALL, "model": "nope"}, "bad.yaml")
    assert main(["validate", str(bad)]) == 2
    assert main(["validate", str(_write(tmp_path, {**SMALL, "params": {"theta": -1.0}}, "neg.yaml"))]) == 2
    boom = _write(tmp_path, {**SMALL, "init": {"kind": "point", "value": 2e6}}, "boom.yaml")
    assert main(["simulate", str(boom), "--N", "3", "--out", str(tmp_path / "o")]) == 3


def test_cli_pipeline(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "out"
    assert main(["solve-invariant", str(cfg), "--out", str(out)]) == 0
    assert (out / "pi.csv").read_text().startswith("x,pi,pi_prime")
    assert main(["simulate", str(cfg), "--out", str(out), "--seed", "5", "--N", "50"]) == 0
    ens = out / "ensemble_N50.csv"
    assert json.loads((tmp_path / "out" / "ensemble_N50.csv.json").read_text())["seed"] == 5
    assert main(["estimate", str(cfg), "--out", str(out), "--ensemble", str(ens), "--mode", "clip", "--a", "0.25"]) == 0
    est = json.loads((out / "estimate.json").read_text())
    assert est["mode"] == "clip" and est["a"] == 0.25 and est["floor_ok"]
    assert (out / "kernel_estimates.csv").read_text().startswith("y,pi_hat,pi_prime_hat,l_hat")
    study = tmp_path / "study"
    assert main(["study", str(_write(tmp_path, {**SMALL, "N_list": [100], "replicates": 1}, "s.yaml")),
                 "--out", str(study)]) == 0
    assert (study / "report.txt").exists()
    assert main(["report", str(study), "--csv", str(tmp_path / "r.csv")]) == 0
    assert (tmp_path / "r.csv").read_text().startswith("metric,N,median,iqr")
    assert main(["report", str(tmp_path / "absent")]) == 2


def test_console_entry_point(tmp_path):
    cfg = _write(tmp_path, SMALL)
    proc = subprocess.run([sys.executable, "-m", "mvdecon", "validate", str(cfg)], capture_output=True, text=True)
    assert proc.returncode == 0 and "lambda = " in proc.stdout
