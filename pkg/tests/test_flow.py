from __future__ import annotations

import json

import numpy as np
import pytest

from conftest import phi, sphere_F
from hmcf_lab.config import FlowConfig, GridConfig
from hmcf_lab.errors import TimeStepUnderflowError
from hmcf_lab.geometry import compute_extrinsic
from hmcf_lab.pipeline.checkpoint import SnapshotStore
from hmcf_lab.pipeline.flow import (IMEXStepper, MonitorRow, RK4Stepper, checkpoint_payload, dt_cap,
                                    evolution_residuals, fit_decay_rate, implicit_eigenvalues, init_state,
                                    mean_value_f, monotone_after_transient, run_to_leaf, state_from_checkpoint, step,
                                    velocity)
from hmcf_lab.pipeline.foliation import best_fit_sphere
from hmcf_lab.sphere import RadialGraph, get_grid


def _monitors(ts, deficits, f: float = 0.05, area: float = 100.0):
    return [MonitorRow(t=t, deficit=d * f ** 2 * area, aring_max=0.0, grad_aring_max=0.0, speed_max=0.0, area=area,
                       volume=1.0, f=f, dt=1.0, excursion=0.0) for t, d in zip(ts, deficits)]


def _integrate(stepper, c0, dt, n, rhs):
    c = c0
    for _ in range(n):
        c = stepper.advance(c, rhs(c), dt, rhs)
    return c


def test_mean_value_of_F_on_coordinate_sphere(grid16, schwarzschild):
    ext = compute_extrinsic(RadialGraph.sphere(grid16, 20.0), schwarzschild)

    assert mean_value_f(ext) == pytest.approx(0.0226346, rel=1e-6)
    assert mean_value_f(ext) == pytest.approx(sphere_F(1.0, 20.0), rel=1e-12)


def test_coordinate_sphere_is_stationary(grid16, schwarzschild):
    assert np.abs(velocity(RadialGraph.sphere(grid16, 20.0), schwarzschild)).max() < 1e-10


def test_velocity_restores_roundness(grid24, flat):
    sigma, eps = 10.0, 1e-4
    Y = grid24.real_harmonic(2, 0)
    graph = RadialGraph(grid=grid24, rho=sigma + eps * Y, sigma_label=sigma)

    v = velocity(graph, flat)

    # linearized: L Y_2 = Y_2 / sigma^2 on the flat round sphere
    np.testing.assert_allclose(v, -eps * Y / sigma ** 2, atol=1e-3 * eps / sigma ** 2)
    north, equator = np.argmax(Y), np.argmin(Y)
    assert v[north] < 0.0 < v[equator]


def test_implicit_eigenvalues_are_quarter_laplacian(grid16, schwarzschild):
    lam = implicit_eigenvalues(grid16, 20.0, schwarzschild)

    assert lam[0, 0] == 0.0
    assert lam[1, 3] == pytest.approx(-12.0 / (4.0 * 400.0 * phi(1.0, 20.0) ** 4))


def test_imex_stepper_stability_function():
    lam = np.array([-0.5, -3.0, -1e6])
    dt = 0.7
    c1 = IMEXStepper(lam).advance(np.ones(3), lam, dt, lambda c: lam * c)

    g = IMEXStepper.GAMMA
    z = lam * dt
    np.testing.assert_allclose(c1, (1.0 + (1.0 - 2.0 * g) * z) / (1.0 - g * z) ** 2, rtol=1e-12)
    assert abs(c1[2]) < 1e-5


@pytest.mark.parametrize("stepper, order", [(IMEXStepper(np.array([-3.0])), 2), (RK4Stepper(), 4)])
def test_stepper_convergence_order(stepper, order):
    lam, b = -3.0, 2.0

    def rhs(c):
        return lam * c + b

    exact = (1.0 + b / lam) * np.exp(lam) - b / lam
    errors = [abs(_integrate(stepper, np.ones(1), 1.0 / n, n, rhs)[0] - exact) for n in (20, 40)]

    assert np.log2(errors[0] / errors[1]) == pytest.approx(order, abs=0.3)


def test_dt_cap(grid16, schwarzschild, flat):
    config = FlowConfig()
    graph = RadialGraph.sphere(grid16, 20.0)

    assert dt_cap(config, graph, schwarzschild) == pytest.approx(80.0)
    assert dt_cap(config, graph, flat) == pytest.approx(400.0)
    assert dt_cap(FlowConfig(imex=False), graph, flat) < 400.0
    assert dt_cap(FlowConfig(dt_max=3.0), graph, schwarzschild) == 3.0


def test_step_leaves_a_leaf_unchanged(grid16, schwarzschild):
    graph = RadialGraph.sphere(grid16, 20.0)
    state = init_state(graph, FlowConfig(), schwarzschild)

    moved = step(state, FlowConfig(), schwarzschild)

    assert np.abs(moved.graph.rho - graph.rho).max() < 1e-10
    assert moved.step_count == 1 and moved.t > 0.0


def test_adaptive_steps_preserve_volume(grid16, schwarzschild):
    graph = RadialGraph.from_harmonics(grid16, 15.0, [(2, 0, 0.45), (3, 1, 0.15)])
    config = FlowConfig()
    state = init_state(graph, config, schwarzschild)

    for _ in range(5):
        state = step(state, config, schwarzschild)

    assert abs(state.volume - state.vol0) / state.vol0 <= 1e-8
    assert state.monitors[-1].deficit < state.monitors[0].deficit
    assert [m.t for m in state.monitors] == sorted({m.t for m in state.monitors})


def test_time_step_floor(grid16, schwarzschild):
    graph = RadialGraph.from_harmonics(grid16, 15.0, [(2, 0, 0.45)])
    config = FlowConfig(vol_step_tol=1e-300)
    state = init_state(graph, config, schwarzschild)

    with pytest.raises(TimeStepUnderflowError):
        step(state, config, schwarzschild)


def test_resumed_run_retraces_the_uninterrupted_one(tmp_path, grid16, schwarzschild):
    graph = RadialGraph.from_harmonics(grid16, 15.0, [(2, 0, 0.45), (3, 1, 0.15)])
    config = FlowConfig()
    state = init_state(graph, config, schwarzschild)
    for _ in range(3):
        state = step(state, config, schwarzschild)
    store = SnapshotStore(tmp_path)
    store.save_checkpoint(checkpoint_payload(state))

    resumed = state_from_checkpoint(store.load_checkpoint(), schwarzschild)
    for _ in range(3):
        state = step(state, config, schwarzschild)
        resumed = step(resumed, config, schwarzschild)

    np.testing.assert_array_equal(resumed.graph.coeffs, state.graph.coeffs)
    assert resumed.t == state.t
    assert json.dumps(checkpoint_payload(resumed)) == json.dumps(checkpoint_payload(state))


def test_run_on_a_leaf_converges_without_steps(grid16, schwarzschild):
    result = run_to_leaf(RadialGraph.sphere(grid16, 20.0), FlowConfig(), schwarzschild)

    assert result.converged and result.reason == "converged"
    assert result.steps == 0
    assert result.f_sigma == pytest.approx(sphere_F(1.0, 20.0), rel=1e-12)


def test_step_budget_is_reported_not_raised(grid16, schwarzschild):
    graph = RadialGraph.from_harmonics(grid16, 15.0, [(2, 0, 0.45)])

    result = run_to_leaf(graph, FlowConfig(max_steps=3), schwarzschild)

    assert not result.converged
    assert result.reason == "max_steps"
    assert result.steps == 3
    assert result.summary()["converged"] is False


def test_evolution_equations_converge_in_time(grid24, flat):
    graph = RadialGraph.from_harmonics(grid24, 10.0, [(2, 0, 0.3), (3, 1, 0.1)])

    report = evolution_residuals(graph, flat, dt_probe=0.1)

    for key in ("metric", "area", "H", "F"):
        eq = report.equations[key]
        assert eq.rhs_max > 0.0
        assert eq.residual_half < eq.residual
        assert eq.observed_order >= 0.7


def test_evolution_on_a_leaf_is_stationary(grid16, schwarzschild):
    report = evolution_residuals(RadialGraph.sphere(grid16, 15.0), schwarzschild, dt_probe=0.2)

    for eq in report.equations.values():
        assert eq.rhs_max < 1e-8
        assert eq.residual < 1e-8


def test_decay_rate_fit_on_exponential_deficit():
    ts = np.arange(0.0, 1000.0, 10.0)
    monitors = _monitors(ts, np.exp(-0.02 * ts))

    fit = fit_decay_rate(monitors, stop_tol=1e-6)

    assert fit.rate == pytest.approx(0.02, rel=1e-9)
    assert fit.r2 == pytest.approx(1.0)
    assert 3 <= fit.n_points <= 20


def test_monotonicity_after_transient():
    ts = np.arange(0.0, 100.0, 1.0)
    deficits = np.exp(-0.05 * ts)
    assert monotone_after_transient(_monitors(ts, deficits), stop_tol=1e-9)

    bumped = deficits.copy()
    bumped[60] *= 1.5
    assert not monotone_after_transient(_monitors(ts, bumped), stop_tol=1e-9)


@pytest.mark.slow
def test_flat_flow_reaches_the_volume_matched_round_sphere(flat):
    grid = get_grid(24)
    graph = RadialGraph.from_harmonics(grid, 10.0, [(2, 0, 0.2)])
    config = FlowConfig(stop_tol=1e-9)

    result = run_to_leaf(graph, config, flat, GridConfig(n_lat=24))

    assert result.converged
    assert result.monitors[-1].aring_max <= 1e-8
    assert result.vol_drift <= 1e-7
    r_in = result.state.r_in
    radius = (3.0 * result.state.vol0 / (4.0 * np.pi) + r_in ** 3) ** (1.0 / 3.0)
    assert best_fit_sphere(result.leaf).r0 == pytest.approx(radius, rel=1e-6)
    assert result.f_sigma == pytest.approx(0.5 / radius, rel=1e-6)


@pytest.mark.slow
def test_schwarzschild_flow_decays_at_least_at_the_mass_rate(schwarzschild):
    sigma = 20.0
    grid = get_grid(16)
    amplitude = 0.05 * sigma
    graph = RadialGraph.from_harmonics(grid, sigma, [(2, 0, amplitude), (3, 0, amplitude)])

    result = run_to_leaf(graph, FlowConfig(), schwarzschild, GridConfig(n_lat=16))

    assert result.converged
    assert result.decay is not None
    assert result.decay.rate >= 2.0 / sigma ** 3
    assert result.decay.r2 >= 0.999
    assert result.vol_drift <= 1e-6
    assert result.monotone_after_transient
    assert result.max_excursion < 0.1 * sigma
    assert result.f_sigma == pytest.approx(sphere_F(1.0, sigma), rel=1e-2)
