from __future__ import annotations

import csv
import json

import numpy as np

from hmcf_lab.main import main

FLOW_ARGS = ["--set", "grid.n_lat=12", "--set", "sigmas=[20]", "--set", "metric.m=1",
             "--set", 'perturbation=[{"l": 2, "m": 0, "amplitude": 0.2}]']


def _json(path):
    with path.open() as f:
        return json.load(f)


def test_invalid_override_exits_with_config_status(tmp_path):
    assert main(["flow", "--set", "flow.stop_tol=-1", "--output-dir", str(tmp_path / "run")]) == 2


def test_plot_data_on_empty_directory(tmp_path):
    assert main(["plot-data", str(tmp_path)]) == 2


def test_resume_needs_a_saved_config(tmp_path):
    assert main(["resume", str(tmp_path)]) == 2


def test_check_on_flat_space_writes_a_manifest(tmp_path):
    run_dir = tmp_path / "check"

    status = main(["check", "--set", "metric.family=flat", "--set", "metric.m=0", "--set", "sigmas=[15]",
                   "--output-dir", str(run_dir)])

    assert status == 0
    manifest = _json(run_dir / "manifest.json")
    assert manifest["kind"] == "check" and manifest["status"] == 0
    assert manifest["files"] == ["config.json", "checks.json"]
    assert manifest["convergence"] == {"passed": True, "failures": []}
    assert _json(run_dir / "checks.json")["failures"] == []


def test_interrupted_flow_resumes_to_the_same_surface(tmp_path):
    run_dir = tmp_path / "flow"

    assert main(["flow", *FLOW_ARGS, "--set", "flow.max_steps=5", "--output-dir", str(run_dir)]) == 4
    with (run_dir / "monitors.csv").open() as f:
        times = [float(row["t"]) for row in csv.DictReader(f)]
    assert len(times) == 6
    assert np.all(np.diff(times) > 0.0)
    assert _json(run_dir / "manifest.json")["convergence"]["reason"] == "max_steps"

    config = _json(run_dir / "config.json")
    config["flow"]["max_steps"] = 8
    (run_dir / "config.json").write_text(json.dumps(config))
    assert main(["resume", str(run_dir)]) == 4

    straight = tmp_path / "straight"
    assert main(["flow", *FLOW_ARGS, "--set", "flow.max_steps=8", "--output-dir", str(straight)]) == 4

    resumed_report = _json(run_dir / "flow_report.json")
    assert resumed_report["steps"] == 8
    assert resumed_report == _json(straight / "flow_report.json")
    assert _json(run_dir / "leaf.json") == _json(straight / "leaf.json")


def test_center_of_translated_schwarzschild(tmp_path):
    run_dir = tmp_path / "center"

    status = main(["center", "--set", "grid.n_lat=16", "--set", "metric.center=[1, 0, 0]",
                   "--set", "sigmas=[15, 20, 30]", "--output-dir", str(run_dir)])

    assert status == 0
    summary = _json(run_dir / "manifest.json")["convergence"]
    np.testing.assert_allclose(summary["c_hm"], (1.0, 0.0, 0.0), atol=1e-8)
    np.testing.assert_allclose(summary["c_adm"], (1.0, 0.0, 0.0), atol=5e-2)
    assert sorted(p.name for p in (run_dir / "leaves").iterdir()) == [
        "leaf_15.0.json", "leaf_20.0.json", "leaf_30.0.json"]


def test_foliate_then_plot_data(tmp_path):
    run_dir = tmp_path / "foliate"

    assert main(["foliate", "--set", "grid.n_lat=16", "--set", "sigmas=[15, 20, 30]",
                 "--workers", "2", "--output-dir", str(run_dir)]) == 0
    assert main(["plot-data", str(run_dir)]) == 0
    assert (run_dir / "scaling.csv").exists()


def test_identical_runs_write_identical_csvs(tmp_path):
    runs = [tmp_path / "a", tmp_path / "b"]
    for run_dir in runs:
        assert main(["flow", *FLOW_ARGS, "--set", "flow.max_steps=5", "--output-dir", str(run_dir)]) == 4
        assert main(["plot-data", str(run_dir)]) == 0

    for name in ("monitors.csv", "decay.csv", "leaf.json"):
        assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes()


def test_spectrum_of_a_schwarzschild_leaf(tmp_path):
    run_dir = tmp_path / "spectrum"
    sigma = 20.0
    rs = sigma * (1.0 + 0.5 / sigma) ** 2

    status = main(["spectrum", "--set", "grid.n_lat=16", "--set", "sigmas=[20]", "--set", "spectrum.k=4",
                   "--output-dir", str(run_dir)])

    assert status == 0
    manifest = _json(run_dir / "manifest.json")
    assert manifest["files"] == ["config.json", "spectrum.json"]
    assert manifest["convergence"]["converged"]
    report = _json(run_dir / "spectrum.json")["reports"][0]
    assert report["sigma"] == sigma
    assert abs(report["eta0"] - (-0.5 / rs ** 2 + 1.5 / rs ** 3)) < 1e-12
    assert abs(report["mu0"] - 1.5 / rs ** 3) < 1e-12
    assert len(report["next_eigs"]) == 3

    assert main(["plot-data", str(run_dir)]) == 0
    with (run_dir / "spectrum_vs_sigma.csv").open() as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 1 and float(rows[0]["sigma"]) == sigma
