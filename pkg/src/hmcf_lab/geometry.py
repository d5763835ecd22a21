"""Extrinsic geometry of spheres embedded in an asymptotically flat 3-manifold.

Tangential tensors are stored by their components in a ḡ-orthonormal frame
(E_1, E_2) built by Gram-Schmidt from the embedding's derivatives along the
unit-sphere frame (e_theta, e_phi).  Covariant derivatives never touch frame
components directly: a tensor is lifted to Cartesian ambient components,
differentiated spectrally, corrected with the ambient Christoffels and
projected back, so nothing depends on the (e_theta, e_phi) frame, which is
singular at the poles.

Derivative indices come first: ``grad_h[n, k, i, j] = nabla_k h_ij`` and
``hess_h[n, l, k, i, j] = nabla_l nabla_k h_ij``.  Frame index 2 in the
ambient frame (E_1, E_2, nu) is the normal direction.
"""
import csv
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from .errors import FSingularityError, MeanConvexityError
from .metric import MetricJet, MetricParams, eval_jet, riemann_gradient
from .sphere import RadialGraph, SphericalGrid

logger = logging.getLogger(__name__)

_CART = "abcd"
_ON = "pqrs"
_EPS = np.array([[0.0, 1.0], [-1.0, 0.0]])
_I2 = np.eye(2)


@dataclass(frozen=True, eq=False)
class SurfaceEmbedding:
    """Node positions of a parametrized sphere; radial graphs are the usual source."""
    grid: SphericalGrid
    positions: np.ndarray
    sigma_label: float
    origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @classmethod
    def from_graph(cls, graph: RadialGraph) -> "SurfaceEmbedding":
        return cls(grid=graph.grid, positions=graph.embed(), sigma_label=graph.sigma_label, origin=graph.origin)

    def displaced(self, field: np.ndarray) -> "SurfaceEmbedding":
        return SurfaceEmbedding(self.grid, self.positions + field, self.sigma_label, self.origin)


# -- harmonic mean curvature as a function of h -------------------------------

def F_of(h: np.ndarray) -> np.ndarray:
    """F = det h / tr h for (..., 2, 2) orthonormal-frame components."""
    return np.linalg.det(h) / np.trace(h, axis1=-2, axis2=-1)


def F_first(h: np.ndarray) -> np.ndarray:
    """F^{kl} = adj(h)_kl / H - det(h) delta_kl / H^2."""
    H = np.trace(h, axis1=-2, axis2=-1)[..., None, None]
    D = np.linalg.det(h)[..., None, None]
    adj = H * _I2 - h
    return adj / H - D * _I2 / H ** 2


def F_second(h: np.ndarray) -> np.ndarray:
    """F^{kl,pq}, shape (..., 2, 2, 2, 2)."""
    H = np.trace(h, axis1=-2, axis2=-1)[..., None, None, None, None]
    D = np.linalg.det(h)[..., None, None, None, None]
    adj = np.trace(h, axis1=-2, axis2=-1)[..., None, None] * _I2 - h
    eps = np.einsum("kp,lq->klpq", _EPS, _EPS)
    dd = np.einsum("kl,pq->klpq", _I2, _I2)
    return (eps / H
            - np.einsum("...kl,pq->...klpq", adj, _I2) / H ** 2
            - np.einsum("kl,...pq->...klpq", _I2, adj) / H ** 2
            + 2.0 * D * dd / H ** 3)


def principal_frame_F(lam: np.ndarray) -> np.ndarray:
    """Diagonal of F^{kl} in the principal frame: (lambda_2^2, lambda_1^2) / H^2."""
    lam = np.asarray(lam, dtype=float)
    H = lam[..., 0] + lam[..., 1]
    return np.stack([lam[..., 1] ** 2, lam[..., 0] ** 2], axis=-1) / H[..., None] ** 2


def _principal_curvatures(h: np.ndarray) -> np.ndarray:
    a, b, c = h[:, 0, 0], h[:, 0, 1], h[:, 1, 1]
    mean = 0.5 * (a + c)
    disc = np.sqrt(np.maximum((0.5 * (a - c)) ** 2 + b ** 2, 0.0))
    return np.stack([mean - disc, mean + disc], axis=1)


# -- the extrinsic field --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ExtrinsicField:
    """Per-node first and second fundamental forms plus the frame data behind them."""
    grid: SphericalGrid
    params: MetricParams
    sigma_label: float
    origin: Tuple[float, float, float]
    positions: np.ndarray
    tangents: np.ndarray      # (N, 2, 3) derivatives along e_theta, e_phi
    jet: MetricJet
    g: np.ndarray             # induced metric in the (e_theta, e_phi) parametrization
    h_param: np.ndarray       # second fundamental form in the same parametrization
    frame: np.ndarray         # (N, 2, 3) orthonormal tangent vectors E_k
    frame_flat: np.ndarray    # (N, 2, 3) lowered E_k
    coframe: np.ndarray       # E_k = coframe[k, alpha] t_alpha
    nu: np.ndarray
    nu_flat: np.ndarray
    h: np.ndarray             # orthonormal-frame components
    lam: np.ndarray
    H: np.ndarray
    A2: np.ndarray
    F: np.ndarray
    Aring: np.ndarray
    Aring_norm: np.ndarray
    area_density: np.ndarray
    radial_dot: np.ndarray    # nu_a w^a with w the coordinate radial unit vector
    radial_cosine: np.ndarray

    @property
    def size(self) -> int:
        return self.grid.size

    def integrate(self, field: np.ndarray) -> float:
        return float(np.sum(np.asarray(field) * self.area_density * self.grid.weights))

    @cached_property
    def area(self) -> float:
        return self.integrate(np.ones(self.size))

    @cached_property
    def frame3(self) -> np.ndarray:
        return np.concatenate([self.frame, self.nu[:, None, :]], axis=1)

    @cached_property
    def frame_riemann(self) -> np.ndarray:
        """Rbar_ABCD in the frame (E_1, E_2, nu)."""
        f = self.frame3
        return np.einsum("nabcd,nAa,nBb,nCc,nDd->nABCD", self.jet.riemann, f, f, f, f, optimize=True)

    @cached_property
    def frame_riemann_gradient(self) -> np.ndarray:
        """(nabla-bar_E Rbar)_ABCD in the frame, derivative index first."""
        full = eval_jet(self.params, self.positions, with_gradient=True)
        f = self.frame3
        return np.einsum("neabcd,nEe,nAa,nBb,nCc,nDd->nEABCD", riemann_gradient(full), f, f, f, f, f,
                         optimize=True)

    @cached_property
    def ricci_normal(self) -> np.ndarray:
        return np.einsum("nab,na,nb->n", self.jet.ricci, self.nu, self.nu)

    @cached_property
    def normal_curvature(self) -> np.ndarray:
        """Rbar_{3i3j}, shape (N, 2, 2)."""
        return self.frame_riemann[:, 2, :2, 2, :2]

    # -- covariant calculus ---------------------------------------------------

    def covariant_derivative(self, T: np.ndarray, rank: int) -> np.ndarray:
        """nabla of a rank-``rank`` tangential tensor given in frame components.

        ``T`` has shape (N, 2, ..., 2, *batch); the result has shape
        (N, 2, 2, ..., 2, *batch) with the derivative index first.
        """
        E, Ef, c, gamma = self.frame, self.frame_flat, self.coframe, self.jet.gamma
        on, ca = _ON[:rank], _CART[:rank]
        if rank:
            lift = "n%s...,%s->n%s..." % (on, ",".join("n%s%s" % (o, a) for o, a in zip(on, ca)), ca)
            cart = np.einsum(lift, T, *([Ef] * rank))
        else:
            cart = np.asarray(T, dtype=float)
        D = self.grid.frame_derivatives(cart)
        dcart = np.einsum("nkx,nx...->nk...", c, D)
        for s in range(rank):
            swapped = ca[:s] + "e" + ca[s + 1:]
            subscripts = "ne%s%s,nk%s,n%s...->nk%s..." % ("y", ca[s], "y", swapped, ca)
            dcart = dcart - np.einsum(subscripts, gamma, E, cart)
        if not rank:
            return dcart
        proj = "nk%s...,%s->nk%s..." % (ca, ",".join("n%s%s" % (o, a) for o, a in zip(on, ca)), on)
        return np.einsum(proj, dcart, *([E] * rank))

    def gradient(self, u: np.ndarray) -> np.ndarray:
        return self.covariant_derivative(u, 0)

    def hessian(self, u: np.ndarray) -> np.ndarray:
        return self.covariant_derivative(self.gradient(u), 1)

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        hess = self.hessian(u)
        return hess[:, 0, 0] + hess[:, 1, 1]

    def tangent_vectors(self, components: np.ndarray) -> np.ndarray:
        """Ambient vectors from frame components (N, 2)."""
        return np.einsum("nk,nka->na", components, self.frame)


def _frame_from_tangents(t: np.ndarray, g: np.ndarray):
    G = np.einsum("nxa,nab,nyb->nxy", t, g, t)
    s11 = np.sqrt(G[:, 0, 0])
    p = G[:, 0, 1] / s11
    q = np.sqrt(G[:, 1, 1] - p ** 2)
    c = np.zeros_like(G)
    c[:, 0, 0] = 1.0 / s11
    c[:, 1, 0] = -p / (q * s11)
    c[:, 1, 1] = 1.0 / q
    return G, c


def _build(grid: SphericalGrid, X: np.ndarray, t: np.ndarray, params: MetricParams, sigma_label: float,
           origin, require_mean_convex: bool) -> ExtrinsicField:
    jet = eval_jet(params, X, with_gradient=False)
    g, ginv = jet.g, jet.ginv
    G, c = _frame_from_tangents(t, g)
    E = np.einsum("nkx,nxa->nka", c, t)
    Ef = np.einsum("nab,nkb->nka", g, E)

    n = np.cross(t[:, 0], t[:, 1])
    nu_flat = n / np.sqrt(np.einsum("na,nab,nb->n", n, ginv, n))[:, None]
    nu = np.einsum("nab,nb->na", ginv, nu_flat)

    Dnu = grid.frame_derivatives(nu)
    cov_nu = Dnu + np.einsum("nabc,nxb,nc->nxa", jet.gamma, t, nu)
    h_param = np.einsum("nxa,nab,nyb->nxy", cov_nu, g, t)
    h_param = 0.5 * (h_param + np.swapaxes(h_param, 1, 2))
    h = np.einsum("nkx,nly,nxy->nkl", c, c, h_param)
    h = 0.5 * (h + np.swapaxes(h, 1, 2))

    lam = _principal_curvatures(h)
    H = lam[:, 0] + lam[:, 1]
    A2 = lam[:, 0] ** 2 + lam[:, 1] ** 2
    if np.any(np.abs(H) < 1e-12 / sigma_label):
        raise FSingularityError(f"lambda_1 + lambda_2 vanishes at {int(np.sum(np.abs(H) < 1e-12 / sigma_label))} nodes")
    if require_mean_convex and np.any(H <= 1e-6 / sigma_label):
        bad = np.flatnonzero(H <= 1e-6 / sigma_label)
        raise MeanConvexityError(f"mean curvature H <= 1e-6/sigma at {bad.size} nodes (min H = {H.min():.6g})")
    F = (lam[:, 0] * lam[:, 1]) / H
    Aring = h - 0.5 * H[:, None, None] * _I2
    Aring_norm = np.sqrt(np.einsum("nij,nij->n", Aring, Aring))

    area_density = np.sqrt(np.linalg.det(G))
    w = X - np.asarray(origin)[None, :]
    w = w / np.linalg.norm(w, axis=1)[:, None]
    radial_dot = np.einsum("na,na->n", nu_flat, w)
    radial_cosine = radial_dot / np.sqrt(np.einsum("na,nab,nb->n", w, g, w))

    return ExtrinsicField(grid=grid, params=params, sigma_label=float(sigma_label), origin=tuple(origin),
                          positions=X, tangents=t, jet=jet, g=G, h_param=h_param, frame=E, frame_flat=Ef,
                          coframe=c, nu=nu, nu_flat=nu_flat, h=h, lam=lam, H=H, A2=A2, F=F, Aring=Aring,
                          Aring_norm=Aring_norm, area_density=area_density, radial_dot=radial_dot,
                          radial_cosine=radial_cosine)


def compute_extrinsic(graph: RadialGraph, params: MetricParams, require_mean_convex: bool = True) -> ExtrinsicField:
    """Fundamental forms of a radial graph, with tangents taken exactly from rho's coefficients."""
    grid = graph.grid
    D = grid.frame_derivatives_from_coeffs(graph.coeffs)
    w = grid.nodes
    t = np.stack([D[:, 0, None] * w + graph.rho[:, None] * grid.e_theta,
                  D[:, 1, None] * w + graph.rho[:, None] * grid.e_phi], axis=1)
    return _build(grid, graph.embed(), t, params, graph.sigma_label, graph.origin, require_mean_convex)


def compute_embedding_extrinsic(surface: SurfaceEmbedding, params: MetricParams,
                                require_mean_convex: bool = True) -> ExtrinsicField:
    """Fundamental forms of an arbitrary parametrized sphere; tangents are spectral."""
    t = surface.grid.frame_derivatives(surface.positions)
    return _build(surface.grid, surface.positions, t, params, surface.sigma_label, surface.origin,
                  require_mean_convex)


# -- F derivatives --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FDerivatives:
    ext: ExtrinsicField
    F_kl: np.ndarray
    F_klpq: np.ndarray
    grad_F: np.ndarray
    grad_h: np.ndarray
    grad_H: np.ndarray
    grad_Aring: np.ndarray
    w: np.ndarray

    @cached_property
    def grad_Aring_norm(self) -> np.ndarray:
        return np.sqrt(np.einsum("nkij,nkij->n", self.grad_Aring, self.grad_Aring))

    @cached_property
    def hess_h(self) -> np.ndarray:
        return self.ext.covariant_derivative(self.grad_h, 3)

    @cached_property
    def hess_H(self) -> np.ndarray:
        return self.ext.covariant_derivative(self.grad_H, 1)

    @cached_property
    def hess_F(self) -> np.ndarray:
        return self.ext.covariant_derivative(self.grad_F, 1)

    @cached_property
    def grad_w(self) -> np.ndarray:
        return self.ext.covariant_derivative(self.w, 1)

    def operator(self, u: np.ndarray) -> np.ndarray:
        """F^{kl} nabla_k nabla_l u."""
        return np.einsum("nkl,nkl...->n...", self.F_kl, self.ext.hessian(u))


def compute_F_derivatives(ext: ExtrinsicField, graph: RadialGraph = None, params: MetricParams = None) -> FDerivatives:
    """F^{kl}, F^{kl,pq} and first covariant derivatives; ``graph``/``params`` are carried by ``ext``."""
    F_kl = F_first(ext.h)
    F_klpq = F_second(ext.h)
    grad_h = ext.covariant_derivative(ext.h, 2)
    grad_H = grad_h[:, :, 0, 0] + grad_h[:, :, 1, 1]
    grad_Aring = grad_h - 0.5 * grad_H[:, :, None, None] * _I2
    grad_F = np.einsum("nkl,nikl->ni", F_kl, grad_h)
    Rf = ext.frame_riemann
    w = np.einsum("nlil->ni", Rf[:, 2, :2, :2, :2])
    return FDerivatives(ext=ext, F_kl=F_kl, F_klpq=F_klpq, grad_F=grad_F, grad_h=grad_h, grad_H=grad_H,
                        grad_Aring=grad_Aring, w=w)


# -- identity residuals -----------------------------------------------------------

def codazzi_field(ext: ExtrinsicField, fder: FDerivatives = None) -> np.ndarray:
    """nabla_k h_ij - nabla_j h_ik + Rbar_3ijk as an (N, k, i, j) array."""
    gh = (fder or compute_F_derivatives(ext)).grad_h
    Rf = ext.frame_riemann
    return gh - np.einsum("njik->nkij", gh) + np.einsum("nijk->nkij", Rf[:, 2, :2, :2, :2])


def codazzi_residual(ext: ExtrinsicField, graph: RadialGraph = None, params: MetricParams = None,
                     fder: FDerivatives = None) -> float:
    res = codazzi_field(ext, fder)
    return float(np.sqrt(np.einsum("nkij,nkij->n", res, res)).max())


def intrinsic_curvature(ext: ExtrinsicField) -> np.ndarray:
    """Gauss curvature from the Ricci identity applied to the coordinate functions."""
    V = ext.gradient(ext.positions)              # (N, 2, 3)
    D3 = ext.covariant_derivative(ext.covariant_derivative(V, 1), 2)
    C = D3 - np.swapaxes(D3, 1, 2)
    num = np.sum(C[:, 0, 1, 1] * V[:, 0] + C[:, 1, 0, 0] * V[:, 1], axis=-1)
    den = np.sum(V[:, 0] ** 2 + V[:, 1] ** 2, axis=-1)
    return -num / den


def gauss_residual(ext: ExtrinsicField) -> float:
    Rf = ext.frame_riemann
    predicted = Rf[:, 0, 1, 1, 0] + np.linalg.det(ext.h)
    return float(np.abs(intrinsic_curvature(ext) - predicted).max())


def simons_terms(ext: ExtrinsicField, fder: FDerivatives) -> Tuple[np.ndarray, np.ndarray]:
    """Both sides of the Simons-type identity for F^{kl} nabla_k nabla_l h_ij.

    The right-hand side is written in ambient terms: with
    (nabla_a T)_bcd = nabla-bar_a Rbar_3bcd + h_am Rbar_mbcd - h_ac Rbar_3b3d - h_ad Rbar_3bc3
    for T_bcd = Rbar_3bcd restricted to the surface, and the intrinsic
    curvature R_abcd = Rbar_abcd + h_ad h_bc - h_ac h_bd,

        F^{kl} h_ij;kl = nabla_i nabla_j F - F^{kl,pq} nabla_i h_pq nabla_j h_kl
                         + F^{kl} (nabla_l T_jki + nabla_i T_klj)
                         + F^{kl} (R_ilkm h_mj + R_iljm h_km).
    """
    h, F1, F2, gh = ext.h, fder.F_kl, fder.F_klpq, fder.grad_h
    Rf = ext.frame_riemann
    GR = ext.frame_riemann_gradient
    Rt = Rf[:, :2, :2, :2, :2]
    dT = (GR[:, :2, 2, :2, :2, :2]
          + np.einsum("nam,nmbcd->nabcd", h, Rt)
          - np.einsum("nac,nbd->nabcd", h, Rf[:, 2, :2, 2, :2])
          - np.einsum("nad,nbc->nabcd", h, Rf[:, 2, :2, :2, 2]))
    Rint = Rt + np.einsum("nad,nbc->nabcd", h, h) - np.einsum("nac,nbd->nabcd", h, h)

    lhs = np.einsum("nkl,nlkij->nij", F1, fder.hess_h)
    rhs = (fder.hess_F
           - np.einsum("nklpq,nipq,njkl->nij", F2, gh, gh)
           + np.einsum("nkl,nljki->nij", F1, dT)
           + np.einsum("nkl,niklj->nij", F1, dT)
           + np.einsum("nkl,nilkm,nmj->nij", F1, Rint, h)
           + np.einsum("nkl,niljm,nkm->nij", F1, Rint, h))
    return lhs, rhs


def simons_residual(ext: ExtrinsicField, fder: FDerivatives = None, graph: RadialGraph = None,
                    params: MetricParams = None) -> float:
    lhs, rhs = simons_terms(ext, fder or compute_F_derivatives(ext))
    diff = lhs - rhs
    return float(np.sqrt(np.einsum("nij,nij->n", diff, diff)).max())


def identity_residuals(ext: ExtrinsicField, fder: FDerivatives) -> Dict[str, float]:
    """Relative residuals of F^{kl} h_kl = F and F^{kl} h_mk h_ml = 2F^2."""
    scale = float(np.abs(ext.F).max())
    trace = np.einsum("nkl,nkl->n", fder.F_kl, ext.h) - ext.F
    quad = np.einsum("nkl,nmk,nml->n", fder.F_kl, ext.h, ext.h) - 2.0 * ext.F ** 2
    return {
        "trace": float(np.abs(trace).max() / scale),
        "quadratic": float(np.abs(quad).max() / scale ** 2),
    }


# -- Kato-type inequalities -------------------------------------------------------

class KatoReport(BaseModel):
    holds: bool
    etas: List[float]
    violations: Dict[str, List[int]] = Field(default_factory=dict)
    worst_margin: Dict[str, float] = Field(default_factory=dict)
    second_order_holds: bool = True
    second_order_violations: Dict[str, List[int]] = Field(default_factory=dict)


def _kato(lhs, dH2, w2, eta, slack):
    rhs = (0.75 - eta) * dH2 - (0.25 / eta - 1.0) * w2
    margin = lhs - rhs
    return margin, np.flatnonzero(margin < -slack)


def kato_inequality_check(fder: FDerivatives, etas: Sequence[float] = (0.1, 0.25, 0.5),
                          second_order: bool = True) -> KatoReport:
    """Pointwise |nabla A|^2 >= (3/4 - eta)|nabla H|^2 - (1/(4 eta) - 1)|w|^2.

    The second-order analogue with nabla^2 A, nabla^2 H and nabla w is only reported.
    """
    gA2 = np.einsum("nkij,nkij->n", fder.grad_h, fder.grad_h)
    dH2 = np.einsum("nk,nk->n", fder.grad_H, fder.grad_H)
    w2 = np.einsum("ni,ni->n", fder.w, fder.w)
    slack = 1e-8 * (gA2 + dH2 + w2) + 1e-20 * fder.ext.H ** 4
    report = KatoReport(holds=True, etas=list(etas))
    for eta in etas:
        margin, bad = _kato(gA2, dH2, w2, eta, slack)
        key = f"{eta:g}"
        report.worst_margin[key] = float(margin.min())
        if bad.size:
            report.holds = False
            report.violations[key] = bad.tolist()
            logger.warning("Kato inequality fails at %d nodes for eta=%g", bad.size, eta)
    if second_order:
        hA2 = np.einsum("nlkij,nlkij->n", fder.hess_h, fder.hess_h)
        hH2 = np.einsum("nkl,nkl->n", fder.hess_H, fder.hess_H)
        gw2 = np.einsum("nki,nki->n", fder.grad_w, fder.grad_w)
        slack2 = 1e-8 * (hA2 + hH2 + gw2) + 1e-20 * fder.ext.H ** 6
        for eta in etas:
            _, bad = _kato(hA2, hH2, gw2, eta, slack2)
            if bad.size:
                report.second_order_holds = False
                report.second_order_violations[f"{eta:g}"] = bad.tolist()
        logger.debug("second-order Kato check holds: %s", report.second_order_holds)
    return report


# -- diagnostics ---------------------------------------------------------------

NODE_COLUMNS = ("node", "lambda1", "lambda2", "H", "F", "aring_norm", "grad_aring_norm")


def dump_nodes(ext: ExtrinsicField, fder: FDerivatives, path) -> Path:
    """Per-node CSV of the curvature fields."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(NODE_COLUMNS)
        for i in range(ext.size):
            writer.writerow([i] + ["%.17g" % v for v in (ext.lam[i, 0], ext.lam[i, 1], ext.H[i], ext.F[i],
                                                          ext.Aring_norm[i], fder.grad_Aring_norm[i])])
    logger.info("wrote %d node rows to %s", ext.size, path)
    return path
