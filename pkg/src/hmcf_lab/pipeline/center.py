import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel
from sklearn.linear_model import LinearRegression

from ..errors import ConfigError, MassUndefinedError
from ..metric import MetricParams, eval_jet
from ..sphere import get_grid
from .foliation import FoliationLeaf

logger = logging.getLogger(__name__)

Vec3 = Tuple[float, float, float]


class CenterSample(BaseModel):
    scale: float            # sigma for leaves, R for ADM spheres
    value: Vec3


class CenterEstimate(BaseModel):
    value: Vec3
    samples: List[CenterSample]
    fit_residual: float
    monotone: bool


class CenterReport(BaseModel):
    c_hm: CenterEstimate
    c_adm: Optional[CenterEstimate]
    difference: Optional[float]


def _extrapolate(scales: np.ndarray, values: np.ndarray, order: int) -> Tuple[np.ndarray, float]:
    """Intercept of values fitted by c0 + c1/s + ... + c_order/s^order."""
    X = np.stack([scales ** -p for p in range(1, order + 1)], axis=1)
    model = LinearRegression().fit(X, values)
    resid = float(np.abs(model.predict(X) - values).max())
    return model.intercept_, resid


def _monotone_approach(values: np.ndarray, limit: np.ndarray, tol: float = 1e-9) -> bool:
    dist = np.linalg.norm(values - limit, axis=1)
    return bool(np.all(np.diff(dist) <= tol * (1.0 + dist[:-1])))


def c_hm(leaves: Sequence[FoliationLeaf]) -> CenterEstimate:
    """Euclidean-area centroids of the leaves extrapolated to sigma -> infinity."""
    if len(leaves) < 3:
        raise ConfigError(f"C_HM extrapolation needs at least 3 leaves, got {len(leaves)}")
    sigmas = np.array([leaf.sigma for leaf in leaves])
    if sigmas.max() < 1.5 * sigmas.min():
        raise ConfigError("C_HM extrapolation needs leaves spanning a factor of at least 1.5 in sigma")
    values = np.stack([leaf.centroid for leaf in leaves])
    order = 2 if len(leaves) >= 4 else 1
    limit, resid = _extrapolate(sigmas, values, order)
    monotone = _monotone_approach(values, limit)
    if not monotone:
        logger.info("leaf centroids do not approach their extrapolant monotonically")
    return CenterEstimate(value=tuple(float(x) for x in limit),
                          samples=[CenterSample(scale=float(s), value=tuple(float(x) for x in v))
                                   for s, v in zip(sigmas, values)],
                          fit_residual=resid, monotone=monotone)


def adm_flux(params: MetricParams, radius: float, n_lat: int = 24) -> np.ndarray:
    """
    ADM center integral over the coordinate sphere |x| = R:

        1/(16 pi m) int [ x^k (g_ij,i - g_ii,j) nu^j - (g_ik nu^i - g_ii nu^k) ] dA_e
    """
    if params.m <= 0:
        raise MassUndefinedError("the ADM center of mass is undefined for m = 0")
    grid = get_grid(n_lat)
    nu = grid.nodes
    x = radius * nu
    jet = eval_jet(params, x, with_gradient=False)
    div = np.einsum("niij->nj", jet.dg)
    dtr = np.einsum("njii->nj", jet.dg)
    trace = np.einsum("nii->n", jet.g)
    first = x * np.einsum("nj,nj->n", div - dtr, nu)[:, None]
    second = np.einsum("nik,ni->nk", jet.g, nu) - trace[:, None] * nu
    integrand = first - second
    return (grid.weights * radius ** 2) @ integrand / (16.0 * np.pi * params.m)


def adm_center(params: MetricParams, radius_list: Sequence[float] = (50.0, 100.0, 200.0),
               n_lat: int = 24) -> CenterEstimate:
    radii = np.array(sorted(float(r) for r in radius_list))
    values = np.stack([adm_flux(params, r, n_lat) for r in radii])
    if radii.size >= 2:
        limit, resid = _extrapolate(radii, values, 1)
    else:
        limit, resid = values[0], 0.0
    logger.info("ADM center %s from radii %s", np.array2string(limit, precision=6), radii.tolist())
    return CenterEstimate(value=tuple(float(x) for x in limit),
                          samples=[CenterSample(scale=float(r), value=tuple(float(x) for x in v))
                                   for r, v in zip(radii, values)],
                          fit_residual=resid, monotone=_monotone_approach(values, limit))


def center_report(leaves: Sequence[FoliationLeaf], params: MetricParams,
                  radius_list: Sequence[float] = (50.0, 100.0, 200.0)) -> CenterReport:
    hm = c_hm(leaves)
    adm = adm_center(params, radius_list) if params.m > 0 else None
    diff = float(np.linalg.norm(np.subtract(hm.value, adm.value))) if adm is not None else None
    return CenterReport(c_hm=hm, c_adm=adm, difference=diff)
