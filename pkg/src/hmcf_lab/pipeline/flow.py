"""Volume-preserving harmonic mean curvature flow of radial graphs.

The state is the spherical-harmonic coefficient table of rho.  Steppers
advance coefficients; node values are always synthesized from them, so a
run resumed from a checkpoint retraces the uninterrupted trajectory.
"""
import csv
import io
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from pydantic import BaseModel
from sklearn.linear_model import LinearRegression

from ..config import FlowConfig, GridConfig
from ..errors import (DomainError, FSingularityError, GraphDegeneracyError, MeanConvexityError,
                      TimeStepUnderflowError)
from ..geometry import (ExtrinsicField, SurfaceEmbedding, compute_embedding_extrinsic, compute_extrinsic,
                        compute_F_derivatives)
from ..metric import MetricParams
from ..sphere import RadialGraph, SphericalGrid, default_inner_radius, enclosed_volume
from .checkpoint import atomic_write_text

logger = logging.getLogger(__name__)

DEGENERACY_COSINE = 0.1
_RETRYABLE = (DomainError, MeanConvexityError, GraphDegeneracyError, FSingularityError)


class MonitorRow(BaseModel):
    t: float
    deficit: float          # integral of (F - f)^2
    aring_max: float
    grad_aring_max: float
    speed_max: float        # max |F - f|
    area: float
    volume: float
    f: float
    dt: float
    excursion: float        # max |rho - sigma|


MONITOR_COLUMNS = tuple(MonitorRow.model_fields)


@dataclass(frozen=True, eq=False)
class FlowState:
    graph: RadialGraph
    t: float
    vol0: float
    volume: float
    dt: float
    r_in: float
    n_radial: int
    step_count: int = 0
    monitors: List[MonitorRow] = field(default_factory=list)
    ext: Optional[ExtrinsicField] = field(default=None, repr=False)

    @property
    def sigma(self) -> float:
        return self.graph.sigma_label


# -- speed ----------------------------------------------------------------------

def mean_value_f(ext: ExtrinsicField, graph: RadialGraph = None) -> float:
    """Area average of F."""
    return ext.integrate(ext.F) / ext.area


def radial_speed(ext: ExtrinsicField) -> np.ndarray:
    """d rho / dt for normal speed f - F."""
    worst = float(ext.radial_cosine.min())
    if worst <= DEGENERACY_COSINE:
        raise GraphDegeneracyError(f"normal/radial cosine fell to {worst:.4g}; surface folds over the radial fibration")
    return (mean_value_f(ext) - ext.F) / ext.radial_dot


def velocity(state, params: MetricParams) -> np.ndarray:
    """Radial speed of a FlowState (or a bare RadialGraph) at its nodes."""
    if isinstance(state, RadialGraph):
        return radial_speed(compute_extrinsic(state, params))
    ext = state.ext if state.ext is not None else compute_extrinsic(state.graph, params)
    return radial_speed(ext)


def implicit_eigenvalues(grid: SphericalGrid, sigma: float, params: MetricParams) -> np.ndarray:
    """1/4 Laplacian of the coordinate sphere of radius sigma, per (m, l) coefficient."""
    phi = params.background_phi(sigma)
    ls = grid.degree.astype(float)
    per_degree = -ls * (ls + 1.0) / (4.0 * sigma ** 2 * phi ** 4)
    return np.broadcast_to(per_degree[None, :], (grid.L + 1, grid.L + 1)).copy()


class _SpeedField:
    """Filtered radial speed as a map on coefficient tables."""

    def __init__(self, template: RadialGraph, params: MetricParams, filter_strength: float):
        self.template = template
        self.params = params
        self.profile = template.grid.filter_profile(filter_strength)

    def from_ext(self, ext: ExtrinsicField) -> np.ndarray:
        grid = self.template.grid
        return grid.scale_coeffs(grid.analyze(radial_speed(ext)), self.profile)

    def graph(self, c: np.ndarray) -> RadialGraph:
        t = self.template
        return RadialGraph.from_coeffs(t.grid, c, t.sigma_label, origin=t.origin)

    def __call__(self, c: np.ndarray) -> np.ndarray:
        return self.from_ext(compute_extrinsic(self.graph(c), self.params))


# -- steppers -------------------------------------------------------------------

class TimeStepper(ABC):
    @abstractmethod
    def advance(self, c0: np.ndarray, v0: np.ndarray, dt: float, rhs: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """One step from coefficients ``c0`` whose speed ``v0 = rhs(c0)`` is already known."""


class RK4Stepper(TimeStepper):
    """Classical explicit fourth-order Runge-Kutta."""

    def advance(self, c0, v0, dt, rhs):
        k1 = v0
        k2 = rhs(c0 + 0.5 * dt * k1)
        k3 = rhs(c0 + 0.5 * dt * k2)
        k4 = rhs(c0 + dt * k3)
        return c0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class IMEXStepper(TimeStepper):
    """
    Two-stage, second-order, L-stable implicit-explicit Runge-Kutta.

    The diagonal linear part ``lam`` is implicit, the remainder of the
    speed is explicit.
    """
    GAMMA = 1.0 - 1.0 / np.sqrt(2.0)
    DELTA = 1.0 - 1.0 / (2.0 * GAMMA)

    def __init__(self, lam: np.ndarray):
        self.lam = lam

    def advance(self, c0, v0, dt, rhs):
        lam, g, d = self.lam, self.GAMMA, self.DELTA
        denom = 1.0 - dt * g * lam
        n0 = v0 - lam * c0
        c1 = (c0 + dt * g * n0) / denom
        n1 = rhs(c1) - lam * c1
        return (c0 + dt * (d * n0 + (1.0 - d) * n1) + dt * (1.0 - g) * lam * c1) / denom


def make_stepper(config: FlowConfig, graph: RadialGraph, params: MetricParams) -> TimeStepper:
    if config.imex:
        return IMEXStepper(implicit_eigenvalues(graph.grid, graph.sigma_label, params))
    return RK4Stepper()


# -- step size --------------------------------------------------------------------

def explicit_dt(config: FlowConfig, graph: RadialGraph, params: MetricParams) -> float:
    sigma = graph.sigma_label
    h = sigma * params.background_phi(sigma) ** 2 * float(np.diff(graph.grid.theta).min())
    return config.cfl_constant * h ** 2 * 2.0


def dt_cap(config: FlowConfig, graph: RadialGraph, params: MetricParams) -> float:
    sigma = graph.sigma_label
    cap = config.dt_max if config.dt_max is not None else (0.01 * sigma ** 3 / params.m if params.m > 0 else sigma ** 2)
    if not config.imex:
        cap = min(cap, explicit_dt(config, graph, params))
    return cap


def initial_dt(config: FlowConfig, graph: RadialGraph, params: MetricParams) -> float:
    if config.dt_policy == "fixed":
        return float(config.dt)
    if config.dt_initial is not None:
        return min(config.dt_initial, dt_cap(config, graph, params))
    return min(explicit_dt(config, graph, params), dt_cap(config, graph, params))


def _grown_dt(dt: float, err: float, tol: float, cap: float) -> float:
    factor = 2.0 if err <= 0.0 else min(2.0, 0.9 * (tol / err) ** (1.0 / 3.0))
    return min(dt * max(factor, 0.5), cap)


# -- monitors -----------------------------------------------------------------------

def monitor_row(ext: ExtrinsicField, graph: RadialGraph, t: float, volume: float, dt: float) -> MonitorRow:
    fder = compute_F_derivatives(ext)
    f = mean_value_f(ext)
    return MonitorRow(
        t=t,
        deficit=ext.integrate((ext.F - f) ** 2),
        aring_max=float(ext.Aring_norm.max()),
        grad_aring_max=float(fder.grad_Aring_norm.max()),
        speed_max=float(np.abs(ext.F - f).max()),
        area=ext.area,
        volume=volume,
        f=f,
        dt=dt,
        excursion=float(np.abs(graph.rho - graph.sigma_label).max()),
    )


def init_state(graph: RadialGraph, config: FlowConfig, params: MetricParams,
               grid_config: Optional[GridConfig] = None) -> FlowState:
    grid_config = grid_config or GridConfig(n_lat=graph.grid.n_lat)
    graph = RadialGraph.from_coeffs(graph.grid, graph.coeffs, graph.sigma_label, origin=graph.origin)
    r_in = grid_config.r_in if grid_config.r_in is not None else default_inner_radius(params)
    vol = enclosed_volume(graph, params, r_in, grid_config.n_radial)
    ext = compute_extrinsic(graph, params)
    dt = initial_dt(config, graph, params)
    row = monitor_row(ext, graph, 0.0, vol, 0.0)
    return FlowState(graph=graph, t=0.0, vol0=vol, volume=vol, dt=dt, r_in=r_in, n_radial=grid_config.n_radial,
                     monitors=[row], ext=ext)


def step(state: FlowState, config: FlowConfig, params: MetricParams,
         stepper: Optional[TimeStepper] = None) -> FlowState:
    """Advance one accepted step; adaptive runs halve dt on volume-error or breakdown rejections."""
    graph0 = state.graph
    ext0 = state.ext if state.ext is not None else compute_extrinsic(graph0, params)
    stepper = stepper or make_stepper(config, graph0, params)
    rhs = _SpeedField(graph0, params, config.filter_strength)
    v0 = rhs.from_ext(ext0)
    c0 = graph0.coeffs
    adaptive = config.dt_policy == "adaptive"
    floor = 1e-12 * graph0.sigma_label ** 2
    dt = state.dt
    last_error: Optional[Exception] = None
    while True:
        if dt < floor:
            raise TimeStepUnderflowError(f"time step fell below {floor:.3g} at t={state.t:.6g}") from last_error
        try:
            graph1 = rhs.graph(stepper.advance(c0, v0, dt, rhs))
            vol1 = enclosed_volume(graph1, params, state.r_in, state.n_radial)
            ext1 = compute_extrinsic(graph1, params)
        except _RETRYABLE as exc:
            if not adaptive:
                raise
            logger.debug("step rejected at dt=%.4g: %s", dt, exc)
            last_error = exc
            dt *= 0.5
            continue
        err = abs(vol1 - state.volume) / state.vol0
        if adaptive and err > config.vol_step_tol:
            logger.debug("step rejected at dt=%.4g: volume change %.3e", dt, err)
            dt *= 0.5
            continue
        break
    next_dt = _grown_dt(dt, err, config.vol_step_tol, dt_cap(config, graph0, params)) if adaptive else dt
    t1 = state.t + dt
    row = monitor_row(ext1, graph1, t1, vol1, dt)
    return replace(state, graph=graph1, t=t1, volume=vol1, dt=next_dt, step_count=state.step_count + 1,
                   monitors=state.monitors + [row], ext=ext1)


# -- evolution-equation probes ---------------------------------------------------

class EquationResidual(BaseModel):
    lhs_max: float
    rhs_max: float
    residual: float
    residual_half: float
    relative: float
    observed_order: Optional[float] = None


class EvolutionReport(BaseModel):
    dt_probe: float
    equations: Dict[str, EquationResidual]


def _probe_quantities(ext: ExtrinsicField) -> Dict[str, np.ndarray]:
    return {"metric": ext.g, "area": ext.area_density, "H": ext.H, "F": ext.F}


def evolution_residuals(state, params: MetricParams, dt_probe: float) -> EvolutionReport:
    """Finite-difference time derivatives of g, dmu, H and F against their evolution equations.

    The surface is moved by s (f - F) nu at fixed parameter for s = dt and dt/2.
    """
    graph = state if isinstance(state, RadialGraph) else state.graph
    surface = SurfaceEmbedding.from_graph(graph)
    ext0 = compute_embedding_extrinsic(surface, params)
    fder = compute_F_derivatives(ext0)
    u = mean_value_f(ext0) - ext0.F
    rhs = {
        "metric": 2.0 * u[:, None, None] * ext0.h_param,
        "area": ext0.H * u * ext0.area_density,
        "H": ext0.laplacian(ext0.F) - u * (ext0.A2 + ext0.ricci_normal),
        "F": fder.operator(ext0.F)
        - u * (2.0 * ext0.F ** 2 - np.einsum("nij,nij->n", fder.F_kl, ext0.normal_curvature)),
    }
    q0 = _probe_quantities(ext0)
    diffs: Dict[str, List[float]] = {k: [] for k in rhs}
    lhs_max: Dict[str, float] = {}
    for s in (dt_probe, 0.5 * dt_probe):
        moved = compute_embedding_extrinsic(surface.displaced(s * u[:, None] * ext0.nu), params,
                                            require_mean_convex=False)
        qs = _probe_quantities(moved)
        for key in rhs:
            fd = (qs[key] - q0[key]) / s
            lhs_max.setdefault(key, float(np.abs(fd).max()))
            diffs[key].append(float(np.abs(fd - rhs[key]).max()))
    equations = {}
    for key, (r1, r2) in diffs.items():
        scale = float(np.abs(rhs[key]).max())
        order = float(np.log2(r1 / r2)) if r1 > 0 and r2 > 0 else None
        equations[key] = EquationResidual(lhs_max=lhs_max[key], rhs_max=scale, residual=r1, residual_half=r2,
                                          relative=r1 / scale if scale > 0 else float("inf") if r1 > 0 else 0.0,
                                          observed_order=order)
    return EvolutionReport(dt_probe=dt_probe, equations=equations)


# -- analysis of a finished run -------------------------------------------------

class DecayFit(BaseModel):
    rate: float
    r2: float
    n_points: int
    t_start: float
    t_end: float


def normalized_deficit(monitors: List[MonitorRow]) -> np.ndarray:
    return np.array([m.deficit / (m.f ** 2 * m.area) for m in monitors])


def fit_decay_rate(monitors: List[MonitorRow], stop_tol: float) -> Optional[DecayFit]:
    """Exponential rate of the deficit over its last decade above 100 stop_tol^2."""
    t = np.array([m.t for m in monitors])
    D = normalized_deficit(monitors)
    idx = np.flatnonzero(D > 100.0 * stop_tol ** 2)
    if idx.size < 3:
        return None
    d_end = D[idx[-1]]
    above = idx[D[idx] > 10.0 * d_end]
    window = idx[idx > above[-1]] if above.size else idx
    if window.size < 3:
        window = idx[-3:]
    x, y = t[window][:, None], np.log(D[window])
    model = LinearRegression().fit(x, y)
    return DecayFit(rate=float(-model.coef_[0]), r2=float(model.score(x, y)), n_points=int(window.size),
                    t_start=float(t[window[0]]), t_end=float(t[window[-1]]))


def monotone_after_transient(monitors: List[MonitorRow], stop_tol: float, transient: float = 0.05) -> bool:
    t = np.array([m.t for m in monitors])
    D = normalized_deficit(monitors)
    if t.size < 3:
        return True
    keep = (t >= t[0] + transient * (t[-1] - t[0])) & (D > 100.0 * stop_tol ** 2)
    d = D[keep]
    return bool(np.all(np.diff(d) <= 1e-9 * d[:-1])) if d.size > 1 else True


@dataclass(frozen=True, eq=False)
class FlowResult:
    leaf: RadialGraph
    f_sigma: float
    monitors: List[MonitorRow]
    converged: bool
    reason: str
    steps: int
    t: float
    vol_drift: float
    decay: Optional[DecayFit]
    monotone_after_transient: bool
    max_excursion: float
    state: FlowState = field(repr=False)

    def summary(self) -> Dict[str, Any]:
        return {
            "sigma": self.leaf.sigma_label,
            "converged": self.converged,
            "reason": self.reason,
            "steps": self.steps,
            "t": self.t,
            "f_sigma": self.f_sigma,
            "vol_drift": self.vol_drift,
            "decay_rate": self.decay.rate if self.decay else None,
            "decay_r2": self.decay.r2 if self.decay else None,
            "monotone_after_transient": self.monotone_after_transient,
            "max_excursion": self.max_excursion,
            "aring_max": self.monitors[-1].aring_max,
            "grad_aring_max": self.monitors[-1].grad_aring_max,
        }


def is_stationary(state: FlowState, config: FlowConfig) -> bool:
    last = state.monitors[-1]
    return last.speed_max <= config.stop_tol * abs(last.f)


def finish(state: FlowState, config: FlowConfig, reason: str) -> FlowResult:
    vols = np.array([m.volume for m in state.monitors])
    return FlowResult(
        leaf=state.graph,
        f_sigma=state.monitors[-1].f,
        monitors=state.monitors,
        converged=reason == "converged",
        reason=reason,
        steps=state.step_count,
        t=state.t,
        vol_drift=float(np.abs(vols - state.vol0).max() / state.vol0),
        decay=fit_decay_rate(state.monitors, config.stop_tol),
        monotone_after_transient=monotone_after_transient(state.monitors, config.stop_tol),
        max_excursion=max(m.excursion for m in state.monitors),
        state=state,
    )


def run_to_leaf(initial: RadialGraph, config: FlowConfig, params: MetricParams,
                grid_config: Optional[GridConfig] = None, store=None,
                state: Optional[FlowState] = None) -> FlowResult:
    """Flow until max|F - f| <= stop_tol f, or until t_max / max_steps run out.

    Running out of time is reported on the result, not raised.
    """
    state = state or init_state(initial, config, params, grid_config)
    stepper = make_stepper(config, state.graph, params)
    while True:
        if is_stationary(state, config):
            reason = "converged"
            break
        if state.t >= config.t_max:
            reason = "t_max"
            break
        if state.step_count >= config.max_steps:
            reason = "max_steps"
            break
        state = step(state, config, params, stepper)
        if store is not None and config.checkpoint_every and state.step_count % config.checkpoint_every == 0:
            store.save_checkpoint(checkpoint_payload(state))
        if state.step_count % 100 == 0:
            last = state.monitors[-1]
            logger.info("sigma=%g step %d t=%.6g max|F-f|/f=%.3e dt=%.4g", state.sigma, state.step_count,
                        state.t, last.speed_max / abs(last.f), last.dt)
    result = finish(state, config, reason)
    level = logging.INFO if result.converged else logging.WARNING
    logger.log(level, "sigma=%g flow %s after %d steps (t=%.6g)", state.sigma, reason, state.step_count, state.t)
    return result


# -- persistence --------------------------------------------------------------------

def checkpoint_payload(state: FlowState) -> Dict[str, Any]:
    return {
        "surface": state.graph.to_snapshot(),
        "t": state.t,
        "vol0": state.vol0,
        "volume": state.volume,
        "dt": state.dt,
        "r_in": state.r_in,
        "n_radial": state.n_radial,
        "step_count": state.step_count,
        "monitors": [m.model_dump() for m in state.monitors],
    }


def state_from_checkpoint(data: Dict[str, Any], params: MetricParams) -> FlowState:
    graph = RadialGraph.from_snapshot(data["surface"])
    return FlowState(graph=graph, t=data["t"], vol0=data["vol0"], volume=data["volume"], dt=data["dt"],
                     r_in=data["r_in"], n_radial=data["n_radial"], step_count=data["step_count"],
                     monitors=[MonitorRow(**m) for m in data["monitors"]], ext=compute_extrinsic(graph, params))


def monitors_csv(monitors: List[MonitorRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MONITOR_COLUMNS)
    for m in monitors:
        writer.writerow(["%.17g" % getattr(m, c) for c in MONITOR_COLUMNS])
    return buf.getvalue()


def write_monitors_csv(monitors: List[MonitorRow], path):
    return atomic_write_text(path, monitors_csv(monitors))
