from __future__ import annotations

import numpy as np
import pytest
from scipy.integrate import quad

from conftest import phi
from hmcf_lab.errors import ConfigError, DomainError, GridMismatchError
from hmcf_lab.geometry import compute_extrinsic
from hmcf_lab.metric import MetricParams
from hmcf_lab.sphere import (RadialGraph, SphericalGrid, embed, enclosed_volume, euclidean_area_density, get_grid,
                             spectral_derivatives, surface_integral)


def _y20(grid: SphericalGrid) -> np.ndarray:
    ct = grid.nodes[:, 2]
    return np.sqrt(5.0 / (16.0 * np.pi)) * (3.0 * ct ** 2 - 1.0)


def test_weights_integrate_the_unit_sphere(grid16):
    assert grid16.weights.sum() == pytest.approx(4.0 * np.pi, rel=1e-12)


def test_real_harmonics_are_orthonormal(grid16):
    labels = [(0, 0), (1, -1), (2, 1), (3, 0), (5, -4), (9, 7)]
    Y = np.stack([grid16.real_harmonic(l, m) for l, m in labels], axis=1)
    gram = np.einsum("n,na,nb->ab", grid16.weights, Y, Y)

    np.testing.assert_allclose(gram, np.eye(len(labels)), atol=1e-12)


def test_transform_reproduces_band_limited_fields(grid16):
    f = grid16.real_harmonic(4, 3) - 0.5 * grid16.real_harmonic(7, -2) + 2.0

    np.testing.assert_allclose(grid16.synthesize(grid16.analyze(f)), f, atol=1e-12)


def test_laplacian_eigenvalues(grid16):
    Y = grid16.real_harmonic(5, -3)

    np.testing.assert_allclose(grid16.laplacian(Y), -30.0 * Y, atol=1e-10)


def test_integral_of_laplacian_vanishes(grid16):
    rng = np.random.default_rng(3)
    _, B, _ = grid16.real_basis(10)
    f = B @ rng.normal(size=B.shape[1])

    assert abs(grid16.integrate(grid16.laplacian(f))) < 1e-10


def test_tangential_gradient_of_height(grid16):
    z = grid16.nodes[:, 2]
    expected = np.array([0.0, 0.0, 1.0])[None, :] - z[:, None] * grid16.nodes

    np.testing.assert_allclose(grid16.gradient(z), expected, atol=1e-12)


def test_filter_keeps_low_degrees_and_damps_the_top(grid24):
    profile = grid24.filter_profile(36.0)

    assert np.all(profile[: grid24.filter_cutoff + 1] == 1.0)
    assert profile[-1] == pytest.approx(np.exp(-36.0))


def test_apply_filter_on_fields(grid24):
    low = grid24.real_harmonic(3, 2)
    top = grid24.real_harmonic(grid24.L, 0)

    np.testing.assert_allclose(grid24.apply_filter(low), low, atol=1e-12)
    np.testing.assert_allclose(grid24.apply_filter(top), np.exp(-36.0) * top, atol=1e-12)


def test_spectral_derivatives_of_zonal_harmonic(grid24):
    eps = 0.01
    graph = RadialGraph(grid=grid24, rho=10.0 + eps * _y20(grid24), sigma_label=10.0)
    d = spectral_derivatives(graph)
    ct, st = grid24.nodes[:, 2], grid24.node_sin
    c = np.sqrt(5.0 / (16.0 * np.pi))

    np.testing.assert_allclose(d.d_theta, -6.0 * eps * c * ct * st, atol=1e-12)
    np.testing.assert_allclose(d.d_theta_theta, -6.0 * eps * c * (ct ** 2 - st ** 2), atol=1e-12)
    assert np.abs(d.d_phi).max() < 1e-12


def test_constant_radius_has_no_derivatives(grid16):
    d = spectral_derivatives(RadialGraph.sphere(grid16, 7.0))

    for field in (d.d_theta, d.d_phi, d.d_theta_theta, d.d_theta_phi, d.d_phi_phi):
        assert np.abs(field).max() < 1e-12


def test_embed_puts_nodes_at_the_graph_radius(grid16):
    graph = RadialGraph(grid=grid16, rho=10.0 + grid16.nodes[:, 2], sigma_label=10.0)
    points = embed(graph)

    np.testing.assert_allclose(np.linalg.norm(points, axis=1), graph.rho)
    assert points[:, 2].max() < 11.0 and points[:, 2].min() > -11.0


def test_euclidean_area_of_round_sphere(grid16):
    graph = RadialGraph.sphere(grid16, 6.0)

    area = surface_integral(graph, np.ones(grid16.size), euclidean_area_density(graph))

    assert area == pytest.approx(4.0 * np.pi * 36.0, rel=1e-12)


def test_surface_integral_rejects_foreign_fields(grid16):
    graph = RadialGraph.sphere(grid16, 6.0)

    with pytest.raises(GridMismatchError):
        surface_integral(graph, np.ones(grid16.size + 1), euclidean_area_density(graph))


def test_offset_sphere_is_a_euclidean_sphere(grid24):
    graph = RadialGraph.offset_sphere(grid24, center=(1.0, -0.5, 2.0), radius=9.0)

    np.testing.assert_allclose(np.linalg.norm(graph.embed() - np.array([1.0, -0.5, 2.0]), axis=1), 9.0)


def test_graph_must_stay_outside_the_unit_ball(grid16):
    with pytest.raises(DomainError):
        RadialGraph.sphere(grid16, 1.0)
    with pytest.raises(GridMismatchError):
        RadialGraph(grid=grid16, rho=np.full(10, 5.0), sigma_label=5.0)


def test_flat_enclosed_volume(grid16, flat):
    graph = RadialGraph.sphere(grid16, 10.0)

    vol = enclosed_volume(graph, flat, r_in=1.5)

    assert vol == pytest.approx(4.0 * np.pi / 3.0 * (1000.0 - 1.5 ** 3), rel=1e-12)


def test_flat_volume_is_translation_invariant(grid24, flat):
    centered = RadialGraph.sphere(grid24, 10.0)
    shifted = RadialGraph.offset_sphere(grid24, center=(1.0, 0.0, 0.0), radius=10.0)

    assert enclosed_volume(shifted, flat, r_in=1.5) == pytest.approx(enclosed_volume(centered, flat, r_in=1.5),
                                                                     rel=1e-10)


def test_schwarzschild_volume_matches_radial_quadrature(grid16):
    params = MetricParams(m=2.0)
    graph = RadialGraph.sphere(grid16, 10.0)
    r_in = 2.0

    oracle, _ = quad(lambda r: 4.0 * np.pi * r ** 2 * phi(2.0, r) ** 6, r_in, 10.0, epsabs=0.0, epsrel=1e-13)

    assert enclosed_volume(graph, params, r_in=r_in) == pytest.approx(oracle, rel=1e-8)


def test_volume_below_inner_sphere_is_a_domain_error(grid16, flat):
    with pytest.raises(DomainError):
        enclosed_volume(RadialGraph.sphere(grid16, 3.0), flat, r_in=4.0)


def test_low_degree_graph_has_no_high_band_energy(grid24):
    graph = RadialGraph.from_harmonics(grid24, 20.0, [(2, 0, 0.5), (3, -1, 0.2)])

    assert grid24.highest_third_energy(graph.coeffs) < 1e-20


def test_snapshot_restores_the_surface(grid16):
    graph = RadialGraph.from_harmonics(grid16, 12.0, [(2, 1, 0.3)], origin=(0.5, 0.0, 0.0))

    restored = RadialGraph.from_snapshot(graph.to_snapshot())

    np.testing.assert_array_equal(restored.rho, grid16.synthesize(graph.coeffs))
    assert restored.origin == (0.5, 0.0, 0.0)
    assert restored.sigma_label == 12.0


def test_snapshot_format_is_checked(grid16):
    data = RadialGraph.sphere(grid16, 5.0).to_snapshot()
    data["version"] = 99

    with pytest.raises(ConfigError):
        RadialGraph.from_snapshot(data)


def test_grid_is_cached_and_validated():
    assert get_grid(12) is get_grid(12)
    with pytest.raises(ConfigError):
        SphericalGrid(3)


def test_quadrature_is_exact_up_to_twice_the_band_limit(grid16):
    rng = np.random.default_rng(7)
    labels, B, _ = grid16.real_basis(grid16.L)
    a = rng.normal(size=len(labels))
    b = np.array([rng.normal() if l < grid16.L else 0.0 for l, _ in labels])

    # the product has degree 2L - 1
    assert grid16.integrate((B @ a) * (B @ b)) == pytest.approx(float(a @ b), abs=1e-11)


def test_enclosed_volume_converges_under_refinement(schwarzschild):
    modes = [(2, 0, 1.5), (3, 1, 1.0)]

    def volume(n_lat, n_radial):
        return enclosed_volume(RadialGraph.from_harmonics(get_grid(n_lat), 10.0, modes), schwarzschild,
                               n_radial=n_radial)

    radial_ref, angular_ref = volume(24, 64), volume(32, 48)
    radial = [abs(volume(24, n) - radial_ref) for n in (8, 16, 32)]
    angular = [abs(volume(n, 48) - angular_ref) for n in (8, 16, 24)]
    reference = angular_ref

    for errors in (radial, angular):
        assert errors[2] <= max(errors[1], 1e-12 * reference)
        assert errors[1] <= max(errors[0], 1e-12 * reference)
        assert errors[2] <= 1e-9 * reference


def test_longitude_rotation_commutes_with_the_geometry(grid16, schwarzschild):
    graph = RadialGraph.from_harmonics(grid16, 15.0, [(2, 1, 0.5), (3, -2, 0.3), (4, 3, 0.2)])

    def rotate(f):
        return np.roll(np.asarray(f).reshape(grid16.n_lat, grid16.n_lon), 1, axis=1).reshape(f.shape)

    turned = graph.with_rho(rotate(graph.rho))
    ext, ext_turned = compute_extrinsic(graph, schwarzschild), compute_extrinsic(turned, schwarzschild)

    np.testing.assert_allclose(ext_turned.F, rotate(ext.F), rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(ext_turned.Aring_norm, rotate(ext.Aring_norm), rtol=1e-8, atol=1e-12)
    assert ext_turned.area == pytest.approx(ext.area, rel=1e-12)
    assert enclosed_volume(turned, schwarzschild) == pytest.approx(enclosed_volume(graph, schwarzschild), rel=1e-12)
