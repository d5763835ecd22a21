from __future__ import annotations

import csv
import json
import math

import pytest

from hmcf_lab.errors import MissingInputError
from hmcf_lab.pipeline.flow import MonitorRow, write_monitors_csv
from hmcf_lab.pipeline.plot_data import emit_plot_data, main


def _rows(path):
    with path.open() as f:
        return list(csv.reader(f))


def _monitor(t: float, deficit: float) -> MonitorRow:
    return MonitorRow(t=t, deficit=deficit, aring_max=0.0, grad_aring_max=0.0, speed_max=0.0, area=1.0, volume=1.0,
                      f=0.1, dt=1.0, excursion=0.0)


def test_decay_curve_from_monitors(tmp_path):
    write_monitors_csv([_monitor(0.0, 1.0), _monitor(1.0, math.e ** -2), _monitor(2.0, 0.0)],
                       tmp_path / "monitors.csv")

    produced = emit_plot_data(tmp_path)

    assert [p.name for p in produced] == ["decay.csv"]
    rows = _rows(tmp_path / "decay.csv")
    assert rows[0] == ["t", "log_F_deficit"]
    assert len(rows) == 3
    assert float(rows[2][1]) == pytest.approx(-2.0)


def test_scaling_and_spectrum_tables(tmp_path):
    leaves = [{"sigma": s, "aring_max": 1e-9 * s ** -2, "grad_aring_max": 0.0, "f_sigma": 0.5 / s}
              for s in (10.0, 20.0)]
    (tmp_path / "foliation.json").write_text(json.dumps({"leaves": leaves}))
    report = {"sigma": 20.0, "eta0": -9.7e-4, "eta0_predicted": -9.375e-4, "mu0": 1.6e-4,
              "h0_structure_ratio": 1e-3}
    (tmp_path / "spectrum.json").write_text(json.dumps({"reports": [report]}))

    produced = emit_plot_data(tmp_path)

    assert [p.name for p in produced] == ["scaling.csv", "spectrum_vs_sigma.csv"]
    scaling = _rows(tmp_path / "scaling.csv")
    assert scaling[0][:2] == ["sigma", "log_sigma"]
    assert scaling[1][5] == "nan"
    spectrum = _rows(tmp_path / "spectrum_vs_sigma.csv")
    assert float(spectrum[1][4]) == pytest.approx(1.6e-4 * 8000.0)


def test_empty_or_missing_run_directory(tmp_path):
    with pytest.raises(MissingInputError):
        emit_plot_data(tmp_path)
    with pytest.raises(MissingInputError):
        emit_plot_data(tmp_path / "absent")
    assert main([str(tmp_path)]) == 2
