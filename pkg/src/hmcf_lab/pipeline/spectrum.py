"""Linearized harmonic mean curvature operator, its adjoint and symmetrization.

    L u  = -(F^{kl} u_kl + 2F^2 u - F^{ij} Rbar_3i3j u)
    L* u = L u - 2 Phi^j u_j - (div Phi) u,     Phi^j = nabla_i F^{ij}
    S    = (L + L*) / 2

Eigenproblems are solved by Galerkin projection onto real spherical
harmonics up to ``basis_degree`` with the metric-weighted L2 product.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from pydantic import BaseModel
from sklearn.linear_model import LinearRegression

from ..errors import EigenSolverError, NumericalError
from ..geometry import (ExtrinsicField, FDerivatives, SurfaceEmbedding, compute_embedding_extrinsic,
                        compute_extrinsic, compute_F_derivatives)
from ..metric import MetricParams
from ..sphere import RadialGraph

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class OperatorAssembly:
    surface: RadialGraph
    params: MetricParams
    ext: ExtrinsicField
    fder: FDerivatives
    potential: np.ndarray     # 2F^2 - F^{ij} Rbar_3i3j
    phi: np.ndarray           # nabla_i F^{ij}
    div_phi: np.ndarray
    basis_degree: int

    @property
    def weights(self) -> np.ndarray:
        return self.ext.area_density * self.surface.grid.weights

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(np.sum(self.weights * u * v))

    def curly(self, u: np.ndarray) -> np.ndarray:
        """F^{kl} nabla_k nabla_l u."""
        return self.fder.operator(u)

    def _bcast(self, a: np.ndarray, u: np.ndarray) -> np.ndarray:
        return a.reshape(a.shape + (1,) * (u.ndim - 1))

    def apply_L(self, u: np.ndarray) -> np.ndarray:
        return -(self.curly(u) + self._bcast(self.potential, u) * u)

    def _drift(self, u: np.ndarray) -> np.ndarray:
        return np.einsum("nj,nj...->n...", self.phi, self.ext.gradient(u))

    def apply_Lstar(self, u: np.ndarray) -> np.ndarray:
        return self.apply_L(u) - 2.0 * self._drift(u) - self._bcast(self.div_phi, u) * u

    def apply_S(self, u: np.ndarray) -> np.ndarray:
        return self.apply_L(u) - self._drift(u) - 0.5 * self._bcast(self.div_phi, u) * u

    @cached_property
    def basis(self) -> Tuple[List[Tuple[int, int]], np.ndarray]:
        labels, values, _ = self.surface.grid.real_basis(self.basis_degree)
        return labels, values

    @cached_property
    def matrices(self) -> Tuple[np.ndarray, np.ndarray]:
        """Galerkin stiffness of S and mass matrix."""
        _, B = self.basis
        WB = self.weights[:, None] * B
        K = WB.T @ self.apply_S(B)
        K = 0.5 * (K + K.T)
        M = WB.T @ B
        M = 0.5 * (M + M.T)
        return K, M


def assemble(surface: RadialGraph, params: MetricParams, basis_degree: Optional[int] = None) -> OperatorAssembly:
    ext = compute_extrinsic(surface, params)
    fder = compute_F_derivatives(ext)
    potential = 2.0 * ext.F ** 2 - np.einsum("nij,nij->n", fder.F_kl, ext.normal_curvature)
    dF = ext.covariant_derivative(fder.F_kl, 2)
    phi = np.einsum("niij->nj", dF)
    div_phi = np.einsum("njj->n", ext.covariant_derivative(phi, 1))
    degree = surface.grid.filter_cutoff if basis_degree is None else min(int(basis_degree), surface.grid.L)
    return OperatorAssembly(surface=surface, params=params, ext=ext, fder=fder, potential=potential, phi=phi,
                            div_phi=div_phi, basis_degree=degree)


# -- eigenvalues -------------------------------------------------------------------

@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    eigenfields: np.ndarray   # node values, one column per eigenvalue
    constrained: bool


def low_spectrum(assembly: OperatorAssembly, constrained: bool = False, k: int = 6) -> Spectrum:
    """Lowest ``k`` eigenvalues of S; ``constrained`` restricts to fields with zero mean."""
    K, M = assembly.matrices
    _, B = assembly.basis
    Z = None
    if constrained:
        ones = B.T @ assembly.weights
        Z = scipy.linalg.null_space(ones[None, :])
        K, M = Z.T @ K @ Z, Z.T @ M @ Z
    k = min(k, K.shape[0])
    try:
        vals, vecs = scipy.linalg.eigh(K, M, subset_by_index=[0, k - 1])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenSolverError(f"generalized eigensolve failed: {exc}") from exc
    if Z is not None:
        vecs = Z @ vecs
    logger.debug("lowest %s eigenvalues: %s", "constrained" if constrained else "unconstrained", vals)
    return Spectrum(eigenvalues=vals, eigenfields=B @ vecs, constrained=constrained)


class StructureReport(BaseModel):
    ratio: float
    mean: float
    anomaly: bool


def eigenfunction_structure_check(assembly: OperatorAssembly, spectrum: Optional[Spectrum] = None) -> StructureReport:
    """||h0 - mean h0|| / (|mean h0| |Sigma|^(1/2)) for the lowest eigenfield h0."""
    spectrum = spectrum or low_spectrum(assembly, constrained=False, k=1)
    h0 = spectrum.eigenfields[:, 0]
    area = assembly.ext.area
    mean = assembly.inner(h0, np.ones_like(h0)) / area
    dev = h0 - mean
    norm = np.sqrt(assembly.inner(dev, dev))
    scale = np.sqrt(assembly.inner(h0, h0) / area)
    anomaly = abs(mean) <= 1e-12 * scale
    if anomaly:
        logger.warning("lowest eigenfield has vanishing mean on sigma=%g", assembly.surface.sigma_label)
        return StructureReport(ratio=float("inf"), mean=float(mean), anomaly=True)
    return StructureReport(ratio=float(norm / (abs(mean) * np.sqrt(area))), mean=float(mean), anomaly=False)


def structure_exponent(sigmas: Sequence[float], ratios: Sequence[float]) -> float:
    """Slope of log ratio against log sigma."""
    x = np.log(np.asarray(sigmas, dtype=float))[:, None]
    y = np.log(np.asarray(ratios, dtype=float))
    return float(LinearRegression().fit(x, y).coef_[0])


# -- residual checks -----------------------------------------------------------------

def _random_fields(assembly: OperatorAssembly, count: int, seed: int, degree: Optional[int] = None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    grid = assembly.surface.grid
    _, B = grid.real_basis(assembly.basis_degree if degree is None else degree)[:2]
    coef = rng.normal(size=(B.shape[1], count))
    return B @ coef


def symmetry_residual(assembly: OperatorAssembly, n_pairs: int = 4, seed: int = 0) -> float:
    U = _random_fields(assembly, 2 * n_pairs, seed)
    worst = 0.0
    for i in range(n_pairs):
        u, v = U[:, 2 * i], U[:, 2 * i + 1]
        Su, Sv = assembly.apply_S(u), assembly.apply_S(v)
        scale = np.sqrt(assembly.inner(Su, Su) * assembly.inner(v, v))
        worst = max(worst, abs(assembly.inner(Su, v) - assembly.inner(u, Sv)) / scale)
    return worst


def adjoint_residual(assembly: OperatorAssembly, n_pairs: int = 4, seed: int = 1) -> float:
    """Relative mismatch of <L* u, v> and <u, L v>."""
    U = _random_fields(assembly, 2 * n_pairs, seed)
    worst = 0.0
    for i in range(n_pairs):
        u, v = U[:, 2 * i], U[:, 2 * i + 1]
        Lsu, Lv = assembly.apply_Lstar(u), assembly.apply_L(v)
        scale = np.sqrt(assembly.inner(Lsu, Lsu) * assembly.inner(v, v))
        worst = max(worst, abs(assembly.inner(Lsu, v) - assembly.inner(u, Lv)) / scale)
    return worst


class QuadraticFormReport(BaseModel):
    min_ratio: float
    bound: float
    fitted_C: float


def quadratic_form_check(assembly: OperatorAssembly, n_samples: int = 8, seed: int = 2) -> QuadraticFormReport:
    """min over random mean-zero u of int F^{ij} u_i u_j / int u^2 against 1/(2 sigma^2) - m/sigma^3."""
    sigma, m = assembly.surface.sigma_label, assembly.params.m
    U = _random_fields(assembly, n_samples, seed)
    w = assembly.weights
    U = U - (w @ U) / w.sum()
    grads = assembly.ext.gradient(U)
    num = np.einsum("n,nij,nik,njk->k", w, assembly.fder.F_kl, grads, grads)
    den = np.einsum("n,nk,nk->k", w, U, U)
    ratio = float((num / den).min())
    bound = 1.0 / (2.0 * sigma ** 2) - m / sigma ** 3
    return QuadraticFormReport(min_ratio=ratio, bound=bound, fitted_C=max(0.0, (bound - ratio) * sigma ** 4))


class FirstVariationReport(BaseModel):
    eps: List[float]
    residuals: List[float]
    orders: List[float]
    observed_order: Optional[float]
    reductions: int = 0


def first_variation_check(surface: RadialGraph, params: MetricParams, u: np.ndarray,
                          eps_list: Sequence[float] = (1e-2, 5e-3, 2.5e-3)) -> FirstVariationReport:
    """[F(X + eps u nu) - F(X)] / eps - L u for each eps; the residual should shrink like eps."""
    embedding = SurfaceEmbedding.from_graph(surface)
    ext0 = compute_embedding_extrinsic(embedding, params)
    fder = compute_F_derivatives(ext0)
    potential = 2.0 * ext0.F ** 2 - np.einsum("nij,nij->n", fder.F_kl, ext0.normal_curvature)
    Lu = -(fder.operator(u) + potential * u)
    eps_used, residuals = [], []
    reductions = 0
    for eps in eps_list:
        for _ in range(6):
            try:
                moved = compute_embedding_extrinsic(embedding.displaced(eps * u[:, None] * ext0.nu), params)
                break
            except NumericalError as exc:
                logger.warning("first variation probe at eps=%g failed (%s); halving", eps, exc)
                eps *= 0.5
                reductions += 1
        else:
            raise NumericalError("first variation probe failed after repeated eps reductions")
        eps_used.append(eps)
        residuals.append(float(np.abs((moved.F - ext0.F) / eps - Lu).max()))
    orders = [float(np.log(r1 / r2) / np.log(e1 / e2))
              for (e1, r1), (e2, r2) in zip(zip(eps_used, residuals), zip(eps_used[1:], residuals[1:]))
              if r1 > 0 and r2 > 0]
    observed = float(np.mean(orders)) if orders else None
    return FirstVariationReport(eps=eps_used, residuals=residuals, orders=orders, observed_order=observed,
                                reductions=reductions)


# -- report ------------------------------------------------------------------------

class SpectrumReport(BaseModel):
    sigma: float
    m: float
    eta0: float
    mu0: float
    next_eigs: List[float]
    h0_structure_ratio: float
    eta0_predicted: float
    mu0_lower_leading: float
    symmetry_residual: float
    adjoint_residual: float
    quadratic_form: QuadraticFormReport


def spectrum_report(surface: RadialGraph, params: MetricParams, k: int = 6,
                    basis_degree: Optional[int] = None) -> SpectrumReport:
    assembly = assemble(surface, params, basis_degree)
    free = low_spectrum(assembly, constrained=False, k=1)
    constrained = low_spectrum(assembly, constrained=True, k=k)
    sigma, m = surface.sigma_label, params.m
    structure = eigenfunction_structure_check(assembly, free)
    report = SpectrumReport(
        sigma=sigma,
        m=m,
        eta0=float(free.eigenvalues[0]),
        mu0=float(constrained.eigenvalues[0]),
        next_eigs=[float(v) for v in constrained.eigenvalues[1:]],
        h0_structure_ratio=structure.ratio,
        eta0_predicted=-1.0 / (2.0 * sigma ** 2) + 5.0 * m / (2.0 * sigma ** 3),
        mu0_lower_leading=1.5 * m / sigma ** 3,
        symmetry_residual=symmetry_residual(assembly),
        adjoint_residual=adjoint_residual(assembly),
        quadratic_form=quadratic_form_check(assembly),
    )
    logger.info("sigma=%g: eta0=%.6e (predicted %.6e), mu0=%.6e", sigma, report.eta0, report.eta0_predicted,
                report.mu0)
    return report
