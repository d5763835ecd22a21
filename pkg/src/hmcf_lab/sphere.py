"""Radial graphs over a Gauss-Legendre x uniform-longitude grid on S^2.

Fields live at grid nodes, flattened latitude-major (``i * n_lon + j``), with
any number of trailing batch axes.  Spectral coefficients are stored as a
complex array ``c[m, l, ...]`` (zero for l < m) such that

    f = sum_m (2 - delta_m0) Re( sum_l c[m, l] Pn_lm(cos theta) e^{i m phi} )

with Pn_lm the orthonormal associated Legendre functions.
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammaln, lpmv, roots_legendre

from .errors import ConfigError, DomainError, GridMismatchError
from .metric import MetricParams, volume_density

logger = logging.getLogger(__name__)

SNAPSHOT_FORMAT = "hmcf-lab/surface"
SNAPSHOT_VERSION = 1


class SphericalGrid:
    """Quadrature nodes, weights and spherical-harmonic transforms up to L = n_lat - 1."""

    def __init__(self, n_lat: int = 24):
        if n_lat < 4:
            raise ConfigError(f"n_lat must be at least 4, got {n_lat}")
        self.n_lat = int(n_lat)
        self.n_lon = 2 * self.n_lat
        self.L = self.n_lat - 1
        self.size = self.n_lat * self.n_lon

        x, w = roots_legendre(self.n_lat)
        # north to south
        self.cos_theta = x[::-1].copy()
        self.lat_weights = w[::-1].copy()
        self.sin_theta = np.sqrt(1.0 - self.cos_theta ** 2)
        self.theta = np.arccos(self.cos_theta)
        self.phi = 2.0 * np.pi * np.arange(self.n_lon) / self.n_lon

        ct = np.repeat(self.cos_theta, self.n_lon)
        st = np.repeat(self.sin_theta, self.n_lon)
        cp = np.tile(np.cos(self.phi), self.n_lat)
        sp = np.tile(np.sin(self.phi), self.n_lat)
        self.nodes = np.stack([st * cp, st * sp, ct], axis=1)
        self.e_theta = np.stack([ct * cp, ct * sp, -st], axis=1)
        self.e_phi = np.stack([-sp, cp, np.zeros_like(cp)], axis=1)
        self.node_sin = st
        self.weights = np.repeat(self.lat_weights, self.n_lon) * (2.0 * np.pi / self.n_lon)

        self.degree = np.arange(self.L + 1)
        self._build_legendre()
        cut = int(np.floor(2.0 * self.L / 3.0))
        self.filter_cutoff = cut

    def _build_legendre(self):
        L, x, s = self.L, self.cos_theta, self.sin_theta
        P = np.zeros((L + 1, L + 1, self.n_lat))
        dP = np.zeros_like(P)
        for m in range(L + 1):
            ls = np.arange(m, L + 1)
            log_ratio = gammaln(ls - m + 1) - gammaln(ls + m + 1)
            norm = np.sqrt((2 * ls + 1) / (4.0 * np.pi) * np.exp(log_ratio))
            P[m, m:] = norm[:, None] * lpmv(m, ls[:, None], x[None, :])
        for m in range(L + 1):
            for l in range(m, L + 1):
                lower = P[m, l - 1] if l - 1 >= m else 0.0
                ratio = np.sqrt((2 * l + 1) * (l - m) * (l + m) / (2 * l - 1)) if l > m else 0.0
                dP[m, l] = (l * x * P[m, l] - ratio * lower) / s
        ms = np.arange(L + 1)[:, None, None]
        ls = np.arange(L + 1)[None, :, None]
        d2P = -(x / s) * dP - (ls * (ls + 1) - ms ** 2 / s ** 2) * P
        mask = (ls >= ms)
        self._P = P
        self._dP = dP * mask
        self._d2P = d2P * mask
        self._Pw = P * self.lat_weights[None, None, :]
        self._m = np.arange(L + 1)
        self.valid = (np.arange(L + 1)[None, :] >= np.arange(L + 1)[:, None])

    # -- transforms ---------------------------------------------------------

    def _as_grid(self, f: np.ndarray) -> Tuple[np.ndarray, Tuple[int, ...]]:
        f = np.asarray(f, dtype=float)
        if f.shape[0] != self.size:
            raise GridMismatchError(f"field has {f.shape[0]} nodes, grid has {self.size}")
        batch = f.shape[1:]
        return f.reshape(self.n_lat, self.n_lon, -1), batch

    def analyze(self, f: np.ndarray) -> np.ndarray:
        fg, batch = self._as_grid(f)
        F = np.fft.rfft(fg, axis=1)[:, : self.L + 1, :] * (2.0 * np.pi / self.n_lon)
        c = np.einsum("mli,imb->mlb", self._Pw, F)
        return c.reshape((self.L + 1, self.L + 1) + batch)

    def synthesize(self, c: np.ndarray, d_theta: int = 0, d_phi: int = 0) -> np.ndarray:
        """Node values of the field (or its theta/phi partial derivatives) from coefficients."""
        batch = c.shape[2:]
        cb = c.reshape(self.L + 1, self.L + 1, -1)
        table = (self._P, self._dP, self._d2P)[d_theta]
        G = np.einsum("mli,mlb->imb", table, cb)
        if d_phi:
            G = G * (1j * self._m)[None, :, None] ** d_phi
        X = np.zeros((self.n_lat, self.n_lon // 2 + 1, G.shape[2]), dtype=complex)
        X[:, : self.L + 1, :] = self.n_lon * G
        f = np.fft.irfft(X, n=self.n_lon, axis=1)
        return f.reshape((self.size,) + batch)

    def frame_derivatives_from_coeffs(self, c: np.ndarray) -> np.ndarray:
        """Derivatives along the unit frame (e_theta, e_phi); shape (N, 2, ...)."""
        dt = self.synthesize(c, d_theta=1)
        dp = self.synthesize(c, d_phi=1)
        s = self.node_sin.reshape((self.size,) + (1,) * (dp.ndim - 1))
        return np.stack([dt, dp / s], axis=1)

    def frame_derivatives(self, f: np.ndarray) -> np.ndarray:
        return self.frame_derivatives_from_coeffs(self.analyze(f))

    def gradient(self, f: np.ndarray) -> np.ndarray:
        """Tangential gradient on the unit sphere as Cartesian vectors, shape (N, 3, ...)."""
        D = self.frame_derivatives(f)
        return np.einsum("na,n...->na...", self.e_theta, D[:, 0]) + np.einsum("na,n...->na...", self.e_phi, D[:, 1])

    def laplacian_eigenvalues(self) -> np.ndarray:
        ls = np.arange(self.L + 1, dtype=float)
        return np.broadcast_to(-ls * (ls + 1), (self.L + 1, self.L + 1))

    def scale_coeffs(self, c: np.ndarray, per_degree: np.ndarray) -> np.ndarray:
        factor = np.broadcast_to(per_degree[None, :], (self.L + 1, self.L + 1))
        return c * factor.reshape(factor.shape + (1,) * (c.ndim - 2))

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        ls = self.degree.astype(float)
        return self.synthesize(self.scale_coeffs(self.analyze(f), -ls * (ls + 1)))

    def filter_profile(self, strength: float = 36.0) -> np.ndarray:
        """1 up to degree floor(2L/3), exp(-strength s^4) above with s reaching 1 at L."""
        ls = self.degree.astype(float)
        cut = self.filter_cutoff
        s = np.clip((ls - cut) / max(self.L - cut, 1), 0.0, None)
        return np.exp(-strength * s ** 4)

    def apply_filter(self, f: np.ndarray, strength: float = 36.0) -> np.ndarray:
        return self.synthesize(self.scale_coeffs(self.analyze(f), self.filter_profile(strength)))

    def integrate(self, f: np.ndarray) -> np.ndarray:
        fg = np.asarray(f)
        return np.tensordot(self.weights, fg, axes=(0, 0))

    # -- real harmonic basis --------------------------------------------------

    def real_harmonic(self, l: int, m: int) -> np.ndarray:
        """Orthonormal real harmonic: cos type for m > 0, sin type for m < 0."""
        if l > self.L or abs(m) > l:
            raise ConfigError(f"harmonic (l={l}, m={m}) not representable at L={self.L}")
        P = np.repeat(self._P[abs(m), l], self.n_lon)
        phi = np.tile(self.phi, self.n_lat)
        if m == 0:
            return P
        if m > 0:
            return np.sqrt(2.0) * P * np.cos(m * phi)
        return np.sqrt(2.0) * P * np.sin(-m * phi)

    def real_basis(self, degree: int):
        """
        Real orthonormal harmonics up to ``degree``.

        Returns (labels, values (N, K), frame derivatives (N, 2, K)) with the
        derivatives taken along e_theta and e_phi exactly from the Legendre tables.
        """
        degree = min(int(degree), self.L)
        phi = np.tile(self.phi, self.n_lat)
        labels: List[Tuple[int, int]] = []
        vals, dth, dph = [], [], []
        s = self.node_sin
        for l in range(degree + 1):
            for m in range(-l, l + 1):
                am = abs(m)
                P = np.repeat(self._P[am, l], self.n_lon)
                dP = np.repeat(self._dP[am, l], self.n_lon)
                if m == 0:
                    ang, dang, amp = np.ones_like(phi), np.zeros_like(phi), 1.0
                elif m > 0:
                    ang, dang, amp = np.cos(m * phi), -m * np.sin(m * phi), np.sqrt(2.0)
                else:
                    ang, dang, amp = np.sin(am * phi), am * np.cos(am * phi), np.sqrt(2.0)
                labels.append((l, m))
                vals.append(amp * P * ang)
                dth.append(amp * dP * ang)
                dph.append(amp * P * dang / s)
        values = np.stack(vals, axis=1)
        derivs = np.stack([np.stack(dth, axis=1), np.stack(dph, axis=1)], axis=1)
        return labels, values, derivs

    def highest_third_energy(self, c: np.ndarray) -> float:
        mult = np.where(np.arange(self.L + 1)[:, None] == 0, 1.0, 2.0) * self.valid
        energy = mult[..., None] * np.abs(c.reshape(self.L + 1, self.L + 1, -1)) ** 2
        high = energy[:, self.filter_cutoff + 1:].sum()
        total = energy.sum()
        return float(high / total) if total > 0 else 0.0


@lru_cache(maxsize=8)
def get_grid(n_lat: int) -> SphericalGrid:
    return SphericalGrid(n_lat)


@dataclass(frozen=True)
class SpectralDerivatives:
    d_theta: np.ndarray
    d_phi: np.ndarray
    d_theta_theta: np.ndarray
    d_theta_phi: np.ndarray
    d_phi_phi: np.ndarray


@dataclass(frozen=True, eq=False)
class RadialGraph:
    """Surface {origin + rho(w) w}; rho sampled at the grid nodes."""
    grid: SphericalGrid
    rho: np.ndarray
    sigma_label: float
    origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    coeffs: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.rho.shape != (self.grid.size,):
            raise GridMismatchError(f"rho has shape {self.rho.shape}, grid expects ({self.grid.size},)")
        if np.any(self.rho <= 1.0):
            raise DomainError(f"radial graph dips to rho = {self.rho.min():.6g} <= 1")
        if self.coeffs is None:
            object.__setattr__(self, "coeffs", self.grid.analyze(self.rho))

    @classmethod
    def from_coeffs(cls, grid: SphericalGrid, coeffs: np.ndarray, sigma_label: float, origin=(0.0, 0.0, 0.0)) -> "RadialGraph":
        return cls(grid=grid, rho=grid.synthesize(coeffs), sigma_label=float(sigma_label), origin=tuple(origin), coeffs=coeffs)

    @classmethod
    def sphere(cls, grid: SphericalGrid, sigma: float, origin=(0.0, 0.0, 0.0)) -> "RadialGraph":
        return cls(grid=grid, rho=np.full(grid.size, float(sigma)), sigma_label=float(sigma), origin=tuple(origin))

    @classmethod
    def from_harmonics(cls, grid: SphericalGrid, sigma: float, modes: Iterable[Tuple[int, int, float]],
                       origin=(0.0, 0.0, 0.0)) -> "RadialGraph":
        """rho = sigma + sum amplitude * Y_lm over real orthonormal harmonics."""
        rho = np.full(grid.size, float(sigma))
        for l, m, amplitude in modes:
            rho = rho + amplitude * grid.real_harmonic(l, m)
        return cls(grid=grid, rho=rho, sigma_label=float(sigma), origin=tuple(origin))

    @classmethod
    def offset_sphere(cls, grid: SphericalGrid, center: Sequence[float], radius: float,
                      origin=(0.0, 0.0, 0.0), sigma_label: Optional[float] = None) -> "RadialGraph":
        """Euclidean sphere |x - center| = radius written as a graph about ``origin``."""
        c = np.asarray(center, dtype=float) - np.asarray(origin, dtype=float)
        if np.linalg.norm(c) >= radius:
            raise DomainError("offset sphere does not enclose the graph origin")
        cw = grid.nodes @ c
        rho = cw + np.sqrt(cw ** 2 - c @ c + radius ** 2)
        return cls(grid=grid, rho=rho, sigma_label=float(sigma_label if sigma_label is not None else radius),
                   origin=tuple(origin))

    def with_rho(self, rho: np.ndarray) -> "RadialGraph":
        return RadialGraph(grid=self.grid, rho=rho, sigma_label=self.sigma_label, origin=self.origin)

    def embed(self) -> np.ndarray:
        return np.asarray(self.origin)[None, :] + self.rho[:, None] * self.grid.nodes

    def to_snapshot(self) -> Dict:
        c = self.coeffs
        return {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "n_lat": self.grid.n_lat,
            "n_lon": self.grid.n_lon,
            "sigma_label": self.sigma_label,
            "origin": list(self.origin),
            "degree": self.grid.L,
            "coeffs_re": c.real.tolist(),
            "coeffs_im": c.imag.tolist(),
        }

    @classmethod
    def from_snapshot(cls, data: Dict) -> "RadialGraph":
        if data.get("format") != SNAPSHOT_FORMAT or data.get("version") != SNAPSHOT_VERSION:
            raise ConfigError(f"unsupported surface snapshot {data.get('format')!r} v{data.get('version')!r}")
        grid = get_grid(int(data["n_lat"]))
        coeffs = np.asarray(data["coeffs_re"]) + 1j * np.asarray(data["coeffs_im"])
        if coeffs.shape != (grid.L + 1, grid.L + 1):
            raise ConfigError("snapshot coefficient table does not match its grid")
        return cls.from_coeffs(grid, coeffs, data["sigma_label"], origin=tuple(data.get("origin", (0.0, 0.0, 0.0))))


def embed(graph: RadialGraph) -> np.ndarray:
    return graph.embed()


def spectral_derivatives(graph: RadialGraph) -> SpectralDerivatives:
    grid, c = graph.grid, graph.coeffs
    return SpectralDerivatives(
        d_theta=grid.synthesize(c, d_theta=1),
        d_phi=grid.synthesize(c, d_phi=1),
        d_theta_theta=grid.synthesize(c, d_theta=2),
        d_theta_phi=grid.synthesize(c, d_theta=1, d_phi=1),
        d_phi_phi=grid.synthesize(c, d_phi=2),
    )


def euclidean_area_density(graph: RadialGraph) -> np.ndarray:
    D = graph.grid.frame_derivatives_from_coeffs(graph.coeffs)
    grad2 = D[:, 0] ** 2 + D[:, 1] ** 2
    return graph.rho * np.sqrt(graph.rho ** 2 + grad2)


def surface_integral(graph: RadialGraph, field: np.ndarray, area_density: np.ndarray) -> float:
    field = np.asarray(field, dtype=float)
    area_density = np.asarray(area_density, dtype=float)
    if field.shape[0] != graph.grid.size or area_density.shape != (graph.grid.size,):
        raise GridMismatchError("field or area density does not live on the graph's grid")
    return float(np.sum(field * area_density * graph.grid.weights))


def default_inner_radius(params: MetricParams) -> float:
    return max(1.5, params.m)


def enclosed_volume(graph: RadialGraph, params: MetricParams, r_in: Optional[float] = None,
                    n_radial: int = 24) -> float:
    """Metric volume between the sphere r = r_in about the graph origin and the graph."""
    r_in = default_inner_radius(params) if r_in is None else float(r_in)
    if np.any(graph.rho <= r_in):
        raise DomainError(f"surface dips below the inner volume sphere r_in = {r_in}")
    t, w = roots_legendre(n_radial)
    half = 0.5 * (graph.rho - r_in)
    r = r_in + half[:, None] * (t[None, :] + 1.0)
    pts = np.asarray(graph.origin)[None, None, :] + r[..., None] * graph.grid.nodes[:, None, :]
    dens = volume_density(params, pts.reshape(-1, 3)).reshape(r.shape)
    radial = np.sum(dens * r ** 2 * w[None, :], axis=1) * half
    return float(np.sum(radial * graph.grid.weights))
