import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel
from scipy.optimize import least_squares
from sklearn.linear_model import LinearRegression

from ..config import FlowConfig, GridConfig
from ..errors import ConfigError, GridMismatchError, NotRoundError
from ..geometry import compute_extrinsic
from ..metric import MetricParams
from ..sphere import RadialGraph, euclidean_area_density, get_grid
from .flow import run_to_leaf
from .spectrum import SpectrumReport, spectrum_report

logger = logging.getLogger(__name__)


class SphereFit(BaseModel):
    r0: float
    a_vec: Tuple[float, float, float]
    residual: float           # max | |y - a| - r0 |
    normal_alignment: float   # max |nu_e - (y - a) / r0|


def euclidean_normal(graph: RadialGraph) -> np.ndarray:
    grid = graph.grid
    D = grid.frame_derivatives_from_coeffs(graph.coeffs)
    t1 = D[:, 0, None] * grid.nodes + graph.rho[:, None] * grid.e_theta
    t2 = D[:, 1, None] * grid.nodes + graph.rho[:, None] * grid.e_phi
    n = np.cross(t1, t2)
    return n / np.linalg.norm(n, axis=1)[:, None]


def best_fit_sphere(graph: RadialGraph) -> SphereFit:
    """Weighted least-squares Euclidean sphere through the graph's points."""
    y = graph.embed()
    w = graph.grid.weights * euclidean_area_density(graph)
    # |y|^2 = 2 a.y + (r0^2 - |a|^2) is linear in (a, r0^2 - |a|^2)
    model = LinearRegression().fit(y, np.einsum("na,na->n", y, y), sample_weight=w)
    a0 = 0.5 * model.coef_
    r_init = np.sqrt(max(model.intercept_ + a0 @ a0, 1e-300))
    sw = np.sqrt(w / w.sum())

    def residuals(p):
        return sw * (np.linalg.norm(y - p[:3], axis=1) - p[3])

    sol = least_squares(residuals, np.concatenate([a0, [r_init]]), xtol=1e-15, ftol=1e-15, gtol=1e-15)
    a, r0 = sol.x[:3], float(sol.x[3])
    dist = np.linalg.norm(y - a, axis=1)
    residual = float(np.abs(dist - r0).max())
    if residual > 0.1 * r0:
        raise NotRoundError(f"sphere fit residual {residual:.4g} exceeds 10% of r0 = {r0:.4g}")
    align = float(np.linalg.norm(euclidean_normal(graph) - (y - a) / r0, axis=1).max())
    return SphereFit(r0=r0, a_vec=tuple(float(x) for x in a), residual=residual, normal_alignment=align)


def centroid(graph: RadialGraph) -> np.ndarray:
    """Centroid of the leaf in the Euclidean area measure."""
    dmu = euclidean_area_density(graph) * graph.grid.weights
    return (graph.embed() * dmu[:, None]).sum(axis=0) / dmu.sum()


@dataclass(frozen=True, eq=False)
class FoliationLeaf:
    sigma: float
    graph: RadialGraph
    f_sigma: float
    fit: SphereFit
    converged: bool
    summary: Dict[str, Any]
    centroid: np.ndarray

    @property
    def r0(self) -> float:
        return self.fit.r0

    @property
    def a_vec(self) -> Tuple[float, float, float]:
        return self.fit.a_vec


class LapseReport(BaseModel):
    sigma_in: float
    sigma_out: float
    min_u: float
    mean_u: float
    structure: float          # max |u - mean u| / |mean u|
    positive: bool


def lapse(inner: RadialGraph, outer: RadialGraph, params: MetricParams) -> Tuple[np.ndarray, LapseReport]:
    """Normal speed of the leaf family between two leaves matched along radial rays."""
    if inner.grid is not outer.grid and inner.grid.n_lat != outer.grid.n_lat:
        raise GridMismatchError("leaves live on different grids")
    if tuple(inner.origin) != tuple(outer.origin):
        raise GridMismatchError("leaves are graphs about different origins")
    d_sigma = outer.sigma_label - inner.sigma_label
    ext = compute_extrinsic(inner, params)
    u = (outer.rho - inner.rho) * ext.radial_dot / d_sigma
    mean = ext.integrate(u) / ext.area
    report = LapseReport(sigma_in=inner.sigma_label, sigma_out=outer.sigma_label, min_u=float(u.min()),
                         mean_u=float(mean), structure=float(np.abs(u - mean).max() / abs(mean)),
                         positive=bool(u.min() > 0.0))
    if not report.positive:
        logger.warning("lapse changes sign between sigma=%g and %g: leaves intersect", inner.sigma_label,
                       outer.sigma_label)
    return u, report


def leaf_nesting(leaves: Sequence[FoliationLeaf]) -> float:
    """min over adjacent pairs of min(rho_outer - rho_inner)."""
    gaps = [float((b.graph.rho - a.graph.rho).min()) for a, b in zip(leaves, leaves[1:])]
    return min(gaps) if gaps else float("inf")


def _flow_leaf(args) -> Tuple[float, RadialGraph, Dict[str, Any]]:
    params, sigma, flow_config, grid_config = args
    grid = get_grid(grid_config.n_lat)
    initial = RadialGraph.sphere(grid, sigma, origin=params.center)
    result = run_to_leaf(initial, flow_config, params, grid_config)
    return sigma, result.leaf, result.summary()


def _make_leaf(sigma: float, graph: RadialGraph, summary: Dict[str, Any]) -> FoliationLeaf:
    return FoliationLeaf(sigma=sigma, graph=graph, f_sigma=summary["f_sigma"], fit=best_fit_sphere(graph),
                         converged=bool(summary["converged"]), summary=summary, centroid=centroid(graph))


def build_foliation(params: MetricParams, sigma_list: Sequence[float], flow_config: FlowConfig,
                    grid_config: Optional[GridConfig] = None, sigma_min: float = 5.0, workers: int = 1,
                    store=None, reuse: bool = True) -> List[FoliationLeaf]:
    """Flow coordinate spheres about the metric's center to leaves.

    With ``reuse`` set, leaves already saved in ``store`` are loaded instead of recomputed.
    """
    grid_config = grid_config or GridConfig()
    sigmas = [float(s) for s in sigma_list]
    if any(b <= a for a, b in zip(sigmas, sigmas[1:])):
        raise ConfigError("sigma_list must be strictly increasing")
    if sigmas and sigmas[0] < sigma_min:
        raise ConfigError(f"sigma {sigmas[0]} is below sigma_min = {sigma_min}")

    done: Dict[float, Tuple[RadialGraph, Dict[str, Any]]] = {}
    if store is not None and reuse:
        for s in sigmas:
            stored = store.load_leaf(s)
            if stored is not None:
                done[s] = (stored["graph"], stored["summary"])
    todo = [(params, s, flow_config, grid_config) for s in sigmas if s not in done]
    logger.info("building %d leaves (%d reused) with %d workers", len(todo), len(done), workers)

    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_flow_leaf, todo))
    else:
        results = [_flow_leaf(job) for job in todo]
    for sigma, graph, summary in results:
        done[sigma] = (graph, summary)
        if store is not None:
            store.save_leaf(sigma, graph, summary)

    leaves = [_make_leaf(s, *done[s]) for s in sigmas]
    for leaf in leaves:
        if not leaf.converged:
            logger.warning("leaf sigma=%g did not converge (%s)", leaf.sigma, leaf.summary.get("reason"))
    return leaves


class LeafRecord(BaseModel):
    sigma: float
    f_sigma: float
    r0: float
    a_vec: Tuple[float, float, float]
    normal_alignment: float
    min_lapse: Optional[float]
    centroid: Tuple[float, float, float]
    aring_max: float
    grad_aring_max: float
    converged: bool
    spectrum: Optional[SpectrumReport] = None


class FoliationReport(BaseModel):
    leaves: List[LeafRecord]
    lapses: List[LapseReport]
    nesting_gap: float
    foliates: bool
    converged: bool
    aring_exponent: Optional[float] = None
    grad_aring_exponent: Optional[float] = None


def scaling_exponent(sigmas: Sequence[float], values: Sequence[float]) -> Optional[float]:
    """Slope of log value against log sigma, or None with fewer than two positive samples."""
    pairs = [(s, v) for s, v in zip(sigmas, values) if v > 0]
    if len(pairs) < 2:
        return None
    x = np.log([p[0] for p in pairs])[:, None]
    y = np.log([p[1] for p in pairs])
    return float(LinearRegression().fit(x, y).coef_[0])


def foliation_report(leaves: Sequence[FoliationLeaf], params: MetricParams, spectrum_k: Optional[int] = None,
                     basis_degree: Optional[int] = None) -> FoliationReport:
    """Lapse, nesting and umbilicity scaling of a sweep; per-leaf spectra when ``spectrum_k`` is given."""
    lapses = [lapse(a.graph, b.graph, params)[1] for a, b in zip(leaves, leaves[1:])]
    records = []
    for i, leaf in enumerate(leaves):
        min_lapse = lapses[i].min_u if i < len(lapses) else None
        records.append(LeafRecord(
            sigma=leaf.sigma, f_sigma=leaf.f_sigma, r0=leaf.r0, a_vec=leaf.a_vec,
            normal_alignment=leaf.fit.normal_alignment, min_lapse=min_lapse,
            centroid=tuple(float(x) for x in leaf.centroid), aring_max=leaf.summary["aring_max"],
            grad_aring_max=leaf.summary["grad_aring_max"], converged=leaf.converged,
            spectrum=spectrum_report(leaf.graph, params, spectrum_k, basis_degree) if spectrum_k else None,
        ))
    gap = leaf_nesting(leaves)
    sig = [leaf.sigma for leaf in leaves]
    return FoliationReport(
        leaves=records,
        lapses=lapses,
        nesting_gap=gap,
        foliates=all(l.positive for l in lapses) and gap > 0,
        converged=all(leaf.converged for leaf in leaves),
        aring_exponent=scaling_exponent(sig, [r.aring_max for r in records]),
        grad_aring_exponent=scaling_exponent(sig, [r.grad_aring_max for r in records]),
    )
