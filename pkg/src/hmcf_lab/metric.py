"""Asymptotically Schwarzschild ambient metrics g = phi^4 delta + P and their curvature.

All evaluation is vectorized over point arrays of shape (N, 3).  Derivative
indices always come first: ``dg[n, c, a, b] = d_c g_ab`` and
``ddg[n, c, d, a, b] = d_c d_d g_ab``.

Curvature sign convention: ``riemann[n, i, j, k, l]`` is R_ijkl with
R_1221 = K > 0 on a round sphere, so the Gauss equation reads
R_ijkl = Rbar_ijkl + h_il h_jk - h_ik h_jl and Ric_jk = g^il R_ijkl.
"""
import logging
from dataclasses import dataclass
from typing import Annotated, Callable, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import DomainError, MetricValidityError

logger = logging.getLogger(__name__)

Vec3 = Tuple[float, float, float]

_EYE = np.eye(3)


class NoPerturbation(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["none"] = "none"


class ConformalDipole(BaseModel):
    """phi gains the harmonic dipole term B.x / r^3."""
    model_config = ConfigDict(frozen=True)
    kind: Literal["conformal_dipole"] = "conformal_dipole"
    B: Vec3 = Field(description="Dipole moment (length^2 units)")


class CustomDecaying(BaseModel):
    """
    Additive tensor perturbation P_ab(y) supplied as a vectorized callable.

    ``tensor`` maps (N, 3) points to (N, 3, 3) symmetric tensors.  When
    ``derivatives`` is given it must return (P, dP, ddP) with the module's
    derivative-first index layout; otherwise derivatives fall back to
    4th-order central differences with step 1e-4 r.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)
    kind: Literal["custom_decaying"] = "custom_decaying"
    tensor: Callable[[np.ndarray], np.ndarray]
    derivatives: Optional[Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray, np.ndarray]]] = None
    bounds: Tuple[float, float, float] = Field(description="C_1, C_2, C_3 in |d^l P| <= C_{l+1} r^(-l-2)")
    label: str = "custom"


Perturbation = Annotated[
    Union[NoPerturbation, ConformalDipole, CustomDecaying], Field(discriminator="kind")
]


class MetricParams(BaseModel):
    """Immutable description of one ambient metric."""
    model_config = ConfigDict(frozen=True)

    m: float = Field(ge=0.0, description="ADM mass; 0 selects flat space")
    perturbation: Perturbation = Field(default_factory=NoPerturbation)
    C0: float = Field(1.0, gt=0.0, description="Aggregate decay constant")
    center: Vec3 = Field((0.0, 0.0, 0.0), description="Coordinate translation a; the metric is built around x - a")

    @property
    def is_conformal(self) -> bool:
        return not isinstance(self.perturbation, CustomDecaying)

    @property
    def dipole(self) -> np.ndarray:
        if isinstance(self.perturbation, ConformalDipole):
            return np.asarray(self.perturbation.B, dtype=float)
        return np.zeros(3)

    def background_phi(self, r: float) -> float:
        return 1.0 + self.m / (2.0 * r)


class AxialAnisotropy:
    """P_ab = q (e3_a e3_b - delta_ab / 3) / r^2, with closed-form derivatives."""

    def __init__(self, q: float):
        self.q = float(q)
        e3 = np.array([0.0, 0.0, 1.0])
        self._T = np.outer(e3, e3) - _EYE / 3.0

    def __call__(self, y: np.ndarray) -> np.ndarray:
        r2 = np.einsum("na,na->n", y, y)
        return self.q * self._T[None] / r2[:, None, None]

    def derivatives(self, y: np.ndarray):
        r2 = np.einsum("na,na->n", y, y)
        s = 1.0 / r2
        ds = -2.0 * y / r2[:, None] ** 2
        dds = 8.0 * np.einsum("nc,nd->ncd", y, y) / r2[:, None, None] ** 3 - 2.0 * _EYE[None] / r2[:, None, None] ** 2
        P = self.q * s[:, None, None] * self._T[None]
        dP = self.q * np.einsum("nc,ab->ncab", ds, self._T)
        ddP = self.q * np.einsum("ncd,ab->ncdab", dds, self._T)
        return P, dP, ddP


def axial_anisotropy(q: float) -> CustomDecaying:
    field = AxialAnisotropy(q)
    a = abs(q)
    return CustomDecaying(tensor=field, derivatives=field.derivatives, bounds=(a, 2.0 * a, 8.0 * a), label="axial-anisotropy")


@dataclass(frozen=True)
class MetricJet:
    """Metric, derivatives, connection and curvature at N points (leading axis)."""
    point: np.ndarray
    g: np.ndarray
    dg: np.ndarray
    ddg: np.ndarray
    gamma: np.ndarray  # gamma[n, c, a, b] = Gamma^c_ab
    riemann: np.ndarray
    ricci: np.ndarray
    scalar: np.ndarray
    dricci: Optional[np.ndarray]  # dricci[n, c, a, b] = d_c Ric_ab
    ginv: np.ndarray

    def __len__(self) -> int:
        return self.point.shape[0]


# -- conformal factor -------------------------------------------------------

def _inverse_r_derivatives(y: np.ndarray, order: int):
    """Derivatives of u = 1/|y| up to ``order`` (at most 4)."""
    r2 = np.einsum("na,na->n", y, y)
    r = np.sqrt(r2)
    u = 1.0 / r
    out = [u]
    r3 = r * r2
    r5 = r3 * r2
    u1 = -y / r3[:, None]
    out.append(u1)
    if order >= 2:
        yy = np.einsum("na,nb->nab", y, y)
        u2 = 3.0 * yy / r5[:, None, None] - _EYE[None] / r3[:, None, None]
        out.append(u2)
    if order >= 3:
        r7 = r5 * r2
        yyy = np.einsum("na,nb,nc->nabc", y, y, y)
        dy = (np.einsum("ab,nc->nabc", _EYE, y) + np.einsum("ac,nb->nabc", _EYE, y)
              + np.einsum("bc,na->nabc", _EYE, y))
        u3 = -15.0 * yyy / r7[:, None, None, None] + 3.0 * dy / r5[:, None, None, None]
        out.append(u3)
    if order >= 4:
        r9 = r7 * r2
        y4 = np.einsum("na,nb,nc,nd->nabcd", y, y, y, y)
        dyy = (np.einsum("ab,nc,nd->nabcd", _EYE, y, y) + np.einsum("ac,nb,nd->nabcd", _EYE, y, y)
               + np.einsum("ad,nb,nc->nabcd", _EYE, y, y) + np.einsum("bc,na,nd->nabcd", _EYE, y, y)
               + np.einsum("bd,na,nc->nabcd", _EYE, y, y) + np.einsum("cd,na,nb->nabcd", _EYE, y, y))
        dd = (np.einsum("ab,cd->abcd", _EYE, _EYE) + np.einsum("ac,bd->abcd", _EYE, _EYE)
              + np.einsum("ad,bc->abcd", _EYE, _EYE))
        u4 = (105.0 * y4 / r9[:, None, None, None, None] - 15.0 * dyy / r7[:, None, None, None, None]
              + 3.0 * dd[None] / r5[:, None, None, None, None])
        out.append(u4)
    return out


def conformal_factor(params: MetricParams, y: np.ndarray, order: int = 2):
    """phi = 1 + (m/2) u - B_k d_k u and its derivatives up to ``order`` (<= 3)."""
    B = params.dipole
    dipole = bool(np.any(B))
    us = _inverse_r_derivatives(y, order + 1 if dipole else order)
    half_m = 0.5 * params.m
    out = [1.0 + half_m * us[0]]
    for k in range(1, order + 1):
        out.append(half_m * us[k])
    if dipole:
        out[0] = out[0] - np.einsum("k,nk->n", B, us[1])
        for k in range(1, order + 1):
            out[k] = out[k] - np.einsum("k,nk...->n...", B, us[k + 1])
    return out


# -- perturbation jets ------------------------------------------------------

def _shift(y: np.ndarray, h: np.ndarray, axis: int, steps: float) -> np.ndarray:
    out = y.copy()
    out[:, axis] += steps * h
    return out


def _fd_jet(tensor: Callable[[np.ndarray], np.ndarray], y: np.ndarray):
    """4th-order central-difference P, dP, ddP with step h = 1e-4 r."""
    h = 1e-4 * np.linalg.norm(y, axis=1)
    P = tensor(y)
    n = y.shape[0]
    dP = np.zeros((n, 3) + P.shape[1:])
    ddP = np.zeros((n, 3, 3) + P.shape[1:])
    hh = h[:, None, None]
    cache = {}
    for c in range(3):
        for s in (-2, -1, 1, 2):
            cache[(c, s)] = tensor(_shift(y, h, c, s))
        dP[:, c] = (-cache[(c, 2)] + 8.0 * cache[(c, 1)] - 8.0 * cache[(c, -1)] + cache[(c, -2)]) / (12.0 * hh)
        ddP[:, c, c] = (-cache[(c, 2)] + 16.0 * cache[(c, 1)] - 30.0 * P + 16.0 * cache[(c, -1)]
                        - cache[(c, -2)]) / (12.0 * hh ** 2)
    coeff = {-2: 1.0, -1: -8.0, 1: 8.0, 2: -1.0}
    for c in range(3):
        for d in range(c + 1, 3):
            acc = np.zeros_like(P)
            for sc, wc in coeff.items():
                for sd, wd in coeff.items():
                    pt = _shift(_shift(y, h, c, sc), h, d, sd)
                    acc += wc * wd * tensor(pt)
            ddP[:, c, d] = acc / (144.0 * hh ** 2)
            ddP[:, d, c] = ddP[:, c, d]
    return P, dP, ddP


def _perturbation_jet(params: MetricParams, y: np.ndarray):
    pert = params.perturbation
    if not isinstance(pert, CustomDecaying):
        return None
    if pert.derivatives is not None:
        return pert.derivatives(y)
    return _fd_jet(pert.tensor, y)


# -- metric evaluation ------------------------------------------------------

def _local_points(params: MetricParams, points) -> np.ndarray:
    x = np.atleast_2d(np.asarray(points, dtype=float))
    y = x - np.asarray(params.center, dtype=float)[None, :]
    r = np.linalg.norm(y, axis=1)
    if np.any(r <= 1.0):
        raise DomainError(f"metric evaluated inside the unit ball (min |x - a| = {r.min():.6g})")
    return y


def metric_tensor(params: MetricParams, points) -> np.ndarray:
    y = _local_points(params, points)
    phi = conformal_factor(params, y, order=0)[0]
    g = (phi ** 4)[:, None, None] * _EYE[None]
    if isinstance(params.perturbation, CustomDecaying):
        g = g + params.perturbation.tensor(y)
    return g


def volume_density(params: MetricParams, points) -> np.ndarray:
    """sqrt(det g) relative to Euclidean volume."""
    if params.is_conformal:
        y = _local_points(params, points)
        return conformal_factor(params, y, order=0)[0] ** 6
    return np.sqrt(np.linalg.det(metric_tensor(params, points)))


def _metric_derivatives(params: MetricParams, y: np.ndarray):
    phi, d1, d2 = conformal_factor(params, y, order=2)
    p3 = phi ** 3
    g = (phi ** 4)[:, None, None] * _EYE[None]
    dg = 4.0 * np.einsum("n,nc,ab->ncab", p3, d1, _EYE)
    ddg = np.einsum("ncd,ab->ncdab", 12.0 * (phi ** 2)[:, None, None] * np.einsum("nc,nd->ncd", d1, d1)
                    + 4.0 * p3[:, None, None] * d2, _EYE)
    pj = _perturbation_jet(params, y)
    if pj is not None:
        P, dP, ddP = pj
        g, dg, ddg = g + P, dg + dP, ddg + ddP
    return g, dg, ddg


def _curvature(g: np.ndarray, dg: np.ndarray, ddg: np.ndarray):
    ginv = np.linalg.inv(g)
    # Gamma_{a,bc} = 1/2 (d_c g_ab + d_b g_ac - d_a g_bc)
    first = 0.5 * (np.einsum("ncab->nabc", dg) + np.einsum("nbac->nabc", dg) - dg)
    gamma = np.einsum("nad,ndbc->nabc", ginv, first)
    second = np.einsum("ncdab->nabcd", ddg)  # g_ab,cd
    # MTW-sign Riemann in local coordinates; the lab's convention is its negative
    mtw = 0.5 * (np.einsum("nadbc->nabcd", second) + np.einsum("nbcad->nabcd", second)
                 - np.einsum("nacbd->nabcd", second) - np.einsum("nbdac->nabcd", second))
    mtw = mtw + np.einsum("nef,nebc,nfad->nabcd", g, gamma, gamma) - np.einsum("nef,nebd,nfac->nabcd", g, gamma, gamma)
    riemann = -mtw
    ricci = np.einsum("nil,nijkl->njk", ginv, riemann)
    scalar = np.einsum("njk,njk->n", ginv, ricci)
    return ginv, gamma, riemann, ricci, scalar


def _conformal_dricci(params: MetricParams, y: np.ndarray) -> np.ndarray:
    phi, p1, p2, p3 = conformal_factor(params, y, order=3)
    f = phi[:, None, None, None]
    lap = np.einsum("nll->n", p2)
    lap_k = np.einsum("nllk->nk", p3)
    grad2 = np.einsum("nl,nl->n", p1, p1)
    out = (-2.0 * p3 / f + 2.0 * np.einsum("nij,nk->nijk", p2, p1) / f ** 2
           + 6.0 * (np.einsum("nik,nj->nijk", p2, p1) + np.einsum("ni,njk->nijk", p1, p2)) / f ** 2
           - 12.0 * np.einsum("ni,nj,nk->nijk", p1, p1, p1) / f ** 3)
    trace_part = (2.0 * lap_k / phi[:, None] - 2.0 * lap[:, None] * p1 / phi[:, None] ** 2
                  + 4.0 * np.einsum("nl,nlk->nk", p1, p2) / phi[:, None] ** 2
                  - 4.0 * grad2[:, None] * p1 / phi[:, None] ** 3)
    out = out - np.einsum("ij,nk->nijk", _EYE, trace_part)
    return out.transpose(0, 3, 1, 2)


def _fd_dricci(params: MetricParams, y: np.ndarray) -> np.ndarray:
    h = 1e-4 * np.linalg.norm(y, axis=1)
    out = np.zeros((y.shape[0], 3, 3, 3))
    for c in range(3):
        vals = {}
        for s in (-2, -1, 1, 2):
            ys = _shift(y, h, c, s)
            vals[s] = _curvature(*_metric_derivatives(params, ys))[3]
        out[:, c] = (-vals[2] + 8.0 * vals[1] - 8.0 * vals[-1] + vals[-2]) / (12.0 * h[:, None, None])
    return out


def eval_jet(params: MetricParams, points, with_gradient: bool = True) -> MetricJet:
    """Full metric jet at one point (shape (3,)) or many points (shape (N, 3))."""
    y = _local_points(params, points)
    g, dg, ddg = _metric_derivatives(params, y)
    if np.any(np.linalg.eigvalsh(g)[:, 0] <= 0.0):
        raise MetricValidityError("metric is not positive definite; perturbation too large")
    ginv, gamma, riemann, ricci, scalar = _curvature(g, dg, ddg)
    dricci = None
    if with_gradient:
        dricci = _conformal_dricci(params, y) if params.is_conformal else _fd_dricci(params, y)
    return MetricJet(point=y + np.asarray(params.center)[None, :], g=g, dg=dg, ddg=ddg, gamma=gamma,
                     riemann=riemann, ricci=ricci, scalar=scalar, dricci=dricci, ginv=ginv)


def riemann_from_ricci(jet: MetricJet) -> np.ndarray:
    """3D reconstruction of R_ijkl from Ric and R (the Weyl tensor vanishes)."""
    g, ric, R = jet.g, jet.ricci, jet.scalar
    return (np.einsum("nil,njk->nijkl", g, ric) + np.einsum("njk,nil->nijkl", g, ric)
            - np.einsum("nik,njl->nijkl", g, ric) - np.einsum("njl,nik->nijkl", g, ric)
            + 0.5 * R[:, None, None, None, None]
            * (np.einsum("nik,njl->nijkl", g, g) - np.einsum("nil,njk->nijkl", g, g)))


def ricci_gradient(jet: MetricJet) -> np.ndarray:
    """Covariant derivative nabla_c Ric_ab, derivative index first."""
    return (jet.dricci - np.einsum("nfca,nfb->ncab", jet.gamma, jet.ricci)
            - np.einsum("nfcb,naf->ncab", jet.gamma, jet.ricci))


def riemann_gradient(jet: MetricJet) -> np.ndarray:
    """nabla_e R_ijkl from nabla Ric through the 3D reconstruction."""
    g = jet.g
    dric = ricci_gradient(jet)
    dR = np.einsum("nab,ncab->nc", jet.ginv, dric)
    return (np.einsum("nil,nejk->neijkl", g, dric) + np.einsum("njk,neil->neijkl", g, dric)
            - np.einsum("nik,nejl->neijkl", g, dric) - np.einsum("njl,neik->neijkl", g, dric)
            + 0.5 * np.einsum("ne,nijkl->neijkl", dR,
                              np.einsum("nik,njl->nijkl", g, g) - np.einsum("nil,njk->nijkl", g, g)))


def bianchi_residual(jet: MetricJet) -> np.ndarray:
    """|g^ac nabla_c Ric_ab - 1/2 d_b R| per point."""
    dric = ricci_gradient(jet)
    div = np.einsum("nac,ncab->nb", jet.ginv, dric)
    dR = np.einsum("nab,ncab->nc", jet.ginv, dric)
    return np.linalg.norm(div - 0.5 * dR, axis=1)


def decay_audit(params: MetricParams, radii, n_directions: int = 32, seed: int = 0) -> float:
    """max |Ric| r^3 over random directions at the given radii."""
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_directions, 3))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    worst = 0.0
    for r in radii:
        jet = eval_jet(params, np.asarray(params.center)[None, :] + r * dirs)
        worst = max(worst, float(np.abs(jet.ricci).max() * r ** 3))
    return worst


def validate_decay(params: MetricParams, n_probes: int = 64, seed: int = 0) -> None:
    """Check |d^l P| <= C_{l+1} r^(-l-2), l <= 2, at random probe points."""
    pert = params.perturbation
    if not isinstance(pert, CustomDecaying):
        return
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_probes, 3))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    r = np.exp(rng.uniform(np.log(2.0), np.log(200.0), size=n_probes))
    y = dirs * r[:, None]
    jets = pert.derivatives(y) if pert.derivatives is not None else _fd_jet(pert.tensor, y)
    for l, (arr, C) in enumerate(zip(jets, pert.bounds)):
        size = np.abs(arr.reshape(n_probes, -1)).max(axis=1)
        ratio = size * r ** (l + 2)
        logger.debug("decay probe l=%d: max |d^l P| r^(l+2) = %.3e (bound %.3e)", l, ratio.max(), C)
        if np.any(ratio > C * (1.0 + 1e-6)):
            raise MetricValidityError(f"perturbation '{pert.label}' violates its order-{l} decay bound {C}")
