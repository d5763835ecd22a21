from __future__ import annotations

import numpy as np
import pytest

from hmcf_lab.pipeline.checks import ambient_residuals, evolution_failures, probe_surface, run_identity_suite
from hmcf_lab.pipeline.flow import EquationResidual, EvolutionReport


@pytest.mark.parametrize("fixture", ["flat", "schwarzschild"])
def test_identity_suite_passes(request, fixture):
    params = request.getfixturevalue(fixture)

    report = run_identity_suite(params, sigma=15.0, n_lat=24)

    assert report.passed, report.failures
    assert report.n_lat_coarse == 16
    assert report.F_trace < 1e-10 and report.F_quadratic < 1e-10
    assert report.kato_holds
    assert set(report.evolution.equations) == {"metric", "area", "H", "F"}
    assert len(report.first_variation.residuals) == 3


def test_ambient_residuals_of_a_dipole(dipole):
    riemann, bianchi = ambient_residuals(dipole)

    assert riemann < 1e-9
    assert bianchi < 1e-8


def test_probe_surface_is_centered_on_the_metric(dipole):
    graph = probe_surface(dipole, 15.0, 16, [(2, 0, 0.45)])

    assert graph.origin == dipole.center
    assert graph.sigma_label == 15.0


def _equation(residual, residual_half, rhs_max=1.0):
    order = float(np.log2(residual / residual_half)) if residual > 0 and residual_half > 0 else None
    return EquationResidual(lhs_max=rhs_max, rhs_max=rhs_max, residual=residual, residual_half=residual_half,
                            relative=residual / rhs_max, observed_order=order)


def test_evolution_residuals_must_be_small_and_first_order():
    report = EvolutionReport(dt_probe=0.1, equations={
        "metric": _equation(1e-4, 5e-5),
        "area": _equation(1e-13, 3e-13),
        "H": _equation(0.5, 0.25, rhs_max=2.0),
        "F": _equation(1e-4, 1e-4),
    })

    assert evolution_failures(report) == ["evolution_H", "evolution_F"]


def test_evolution_bound_scales_with_the_right_hand_side():
    report = EvolutionReport(dt_probe=0.1, equations={"metric": _equation(0.5, 0.25, rhs_max=200.0)})

    assert evolution_failures(report) == []
    assert evolution_failures(report, tol=1e-3) == ["evolution_metric"]
