"""Experiment dispatch: one run directory per config, artifacts plus an atomically written manifest."""
import logging
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Tuple

from pydantic import BaseModel

from .config import RunConfig, config_hash, resolve_output_dir
from .geometry import compute_extrinsic, compute_F_derivatives, dump_nodes
from .metric import MetricParams, validate_decay
from .pipeline.center import center_report
from .pipeline.checkpoint import SnapshotStore, atomic_write_json
from .pipeline.checks import probe_surface, run_identity_suite
from .pipeline.flow import checkpoint_payload, run_to_leaf, state_from_checkpoint, write_monitors_csv
from .pipeline.foliation import build_foliation, foliation_report
from .pipeline.spectrum import spectrum_report, structure_exponent
from .sphere import RadialGraph, get_grid

logger = logging.getLogger(__name__)

ARTIFACT_VERSION = "hmcf-lab/1"

EXIT_OK = 0
EXIT_NUMERIC = 3
EXIT_NOT_CONVERGED = 4


class RunManifest(BaseModel):
    artifact_version: str = ARTIFACT_VERSION
    kind: str
    config_hash: str
    wall_clock_s: float
    files: List[str]
    convergence: Dict[str, Any]
    status: int


Outcome = Tuple[Dict[str, Any], List[Path], int]


def _run_flow(config: RunConfig, params: MetricParams, run_dir: Path, resume: bool) -> Outcome:
    store = SnapshotStore(run_dir)
    state = None
    print("--- Step 1: Initial surface ---")
    if resume and store.has_checkpoint():
        state = state_from_checkpoint(store.load_checkpoint(), params)
        initial = state.graph
        print(f"Resuming from step {state.step_count} at t={state.t:.6g}")
    else:
        if len(config.sigmas) > 1:
            logger.warning("flow runs use only the first sigma (%g)", config.sigmas[0])
        grid = get_grid(config.grid.n_lat)
        initial = RadialGraph.from_harmonics(grid, config.sigmas[0], config.modes(), origin=params.center)
        print(f"sigma={initial.sigma_label:g}, {len(config.perturbation)} harmonic modes, n_lat={grid.n_lat}")

    print("\n--- Step 2: Flow ---")
    result = run_to_leaf(initial, config.flow, params, config.grid, store=store, state=state)
    store.save_checkpoint(checkpoint_payload(result.state))
    print(f"{result.reason} after {result.steps} steps, f_sigma={result.f_sigma:.17g}")

    print("\n--- Step 3: Artifacts ---")
    files = [write_monitors_csv(result.monitors, run_dir / "monitors.csv"),
             atomic_write_json(run_dir / "leaf.json", result.leaf.to_snapshot()),
             atomic_write_json(run_dir / "flow_report.json", result.summary())]
    if config.dump_nodes:
        ext = compute_extrinsic(result.leaf, params)
        files.append(dump_nodes(ext, compute_F_derivatives(ext), run_dir / "nodes.csv"))
    return result.summary(), files, EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _leaves(config: RunConfig, params: MetricParams, run_dir: Path, resume: bool, sigmas=None):
    return build_foliation(params, sigmas or config.sigmas, config.flow, config.grid,
                           sigma_min=config.foliation.sigma_min, workers=config.workers,
                           store=SnapshotStore(run_dir), reuse=resume)


def _run_foliate(config: RunConfig, params: MetricParams, run_dir: Path, resume: bool) -> Outcome:
    print("--- Step 1: Leaves ---")
    leaves = _leaves(config, params, run_dir, resume)
    print(f"Built {len(leaves)} leaves for sigma in {config.sigmas}")
    print("\n--- Step 2: Foliation report ---")
    spectrum_k = config.spectrum.k if config.foliation.with_spectrum else None
    report = foliation_report(leaves, params, spectrum_k, config.spectrum.basis_degree)
    path = atomic_write_json(run_dir / "foliation.json", report.model_dump(mode="json"))
    summary = {"leaves": len(leaves), "foliates": report.foliates, "nesting_gap": report.nesting_gap,
               "min_lapse": min((l.min_u for l in report.lapses), default=None),
               "aring_exponent": report.aring_exponent, "grad_aring_exponent": report.grad_aring_exponent,
               "converged": report.converged}
    return summary, [path], EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def _run_spectrum(config: RunConfig, params: MetricParams, run_dir: Path, resume: bool) -> Outcome:
    sigmas = sorted(set(config.sigmas) | set(config.spectrum.structure_sigmas))
    print("--- Step 1: Leaves ---")
    leaves = _leaves(config, params, run_dir, resume, sigmas)
    print("\n--- Step 2: Spectra ---")
    reports = [spectrum_report(leaf.graph, params, config.spectrum.k, config.spectrum.basis_degree)
               for leaf in leaves]
    for r in reports:
        print(f"sigma={r.sigma:g}: eta0={r.eta0:.6e} (predicted {r.eta0_predicted:.6e}), mu0={r.mu0:.6e}")
    chosen = set(config.spectrum.structure_sigmas) or set(sigmas)
    pairs = [(r.sigma, r.h0_structure_ratio) for r in reports
             if r.sigma in chosen and 0.0 < r.h0_structure_ratio < float("inf")]
    exponent = structure_exponent(*zip(*pairs)) if len(pairs) >= 2 else None
    path = atomic_write_json(run_dir / "spectrum.json", {"reports": [r.model_dump() for r in reports],
                                                         "structure_exponent": exponent})
    converged = all(leaf.converged for leaf in leaves)
    summary = {"eta0": [r.eta0 for r in reports], "mu0": [r.mu0 for r in reports],
               "structure_exponent": exponent, "converged": converged}
    return summary, [path], EXIT_OK if converged else EXIT_NOT_CONVERGED


def _run_center(config: RunConfig, params: MetricParams, run_dir: Path, resume: bool) -> Outcome:
    print("--- Step 1: Leaves ---")
    leaves = _leaves(config, params, run_dir, resume)
    print("\n--- Step 2: Centers ---")
    report = center_report(leaves, params, config.center.radii)
    print(f"C_HM  = {report.c_hm.value}")
    if report.c_adm is not None:
        print(f"C_ADM = {report.c_adm.value}")
    path = atomic_write_json(run_dir / "center.json", report.model_dump(mode="json"))
    converged = all(leaf.converged for leaf in leaves)
    summary = {"c_hm": list(report.c_hm.value),
               "c_adm": list(report.c_adm.value) if report.c_adm is not None else None,
               "difference": report.difference, "converged": converged}
    return summary, [path], EXIT_OK if converged else EXIT_NOT_CONVERGED


def _run_check(config: RunConfig, params: MetricParams, run_dir: Path, resume: bool) -> Outcome:
    print("--- Step 1: Identity suite ---")
    sigma = config.sigmas[0]
    report = run_identity_suite(params, sigma=sigma, n_lat=config.grid.n_lat, modes=config.modes() or None)
    files = [atomic_write_json(run_dir / "checks.json", report.model_dump(mode="json"))]
    if config.dump_nodes:
        graph = probe_surface(params, sigma, config.grid.n_lat, config.modes() or [(2, 0, 0.03 * sigma)])
        ext = compute_extrinsic(graph, params)
        files.append(dump_nodes(ext, compute_F_derivatives(ext), run_dir / "nodes.csv"))
    print("All identities pass." if report.passed else f"Failed: {', '.join(report.failures)}")
    summary = {"passed": report.passed, "failures": report.failures}
    return summary, files, EXIT_OK if report.passed else EXIT_NUMERIC


EXPERIMENTS: Dict[str, Callable[[RunConfig, MetricParams, Path, bool], Outcome]] = {
    "flow": _run_flow,
    "foliate": _run_foliate,
    "spectrum": _run_spectrum,
    "center": _run_center,
    "check": _run_check,
}


def run(config: RunConfig, resume: bool = False) -> RunManifest:
    """Run one experiment and write its manifest."""
    started = time.monotonic()
    run_dir = resolve_output_dir(config)
    run_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_json(run_dir / "config.json", config.model_dump(mode="json"))
    params = config.metric.to_params()
    validate_decay(params, seed=config.seed)
    logger.info("%s run in %s (config %s)", config.kind, run_dir, config_hash(config)[:12])

    summary, files, status = EXPERIMENTS[config.kind](config, params, run_dir, resume)
    manifest = RunManifest(
        kind=config.kind,
        config_hash=config_hash(config),
        wall_clock_s=time.monotonic() - started,
        files=["config.json"] + [Path(f).name for f in files],
        convergence=summary,
        status=status,
    )
    atomic_write_json(run_dir / "manifest.json", manifest.model_dump())
    return manifest
