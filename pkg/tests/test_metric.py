from __future__ import annotations

import numpy as np
import pytest

from conftest import areal_radius, phi, random_directions
from hmcf_lab.errors import DomainError, MetricValidityError
from hmcf_lab.metric import (AxialAnisotropy, CustomDecaying, MetricParams, _fd_dricci, _fd_jet, axial_anisotropy,
                             bianchi_residual, decay_audit, eval_jet, metric_tensor, riemann_from_ricci,
                             validate_decay, volume_density)


def _points(radii=(5.0, 10.0, 20.0), seed: int = 0) -> np.ndarray:
    dirs = random_directions(6, seed)
    return np.concatenate([r * dirs for r in radii])


def _constant_tensor(value: float):
    def tensor(y):
        return np.broadcast_to(value * np.eye(3), (y.shape[0], 3, 3)).copy()

    def derivatives(y):
        n = y.shape[0]
        return tensor(y), np.zeros((n, 3, 3, 3)), np.zeros((n, 3, 3, 3, 3))

    return tensor, derivatives


def test_flat_metric_has_no_curvature(flat):
    jet = eval_jet(flat, [[5.0, 0.0, 0.0]])

    assert np.array_equal(jet.g[0], np.eye(3))
    assert not np.any(jet.riemann)
    assert not np.any(jet.ricci)
    assert jet.scalar[0] == 0.0


def test_schwarzschild_is_scalar_flat():
    params = MetricParams(m=2.0)
    jet = eval_jet(params, 10.0 * random_directions(8))

    assert np.abs(jet.scalar).max() < 1e-14


def test_schwarzschild_ricci_matches_areal_radius_closed_form(schwarzschild):
    r = 20.0
    jet = eval_jet(schwarzschild, [[r, 0.0, 0.0]])
    rs = areal_radius(1.0, r)

    radial = jet.ricci[0, 0, 0] / jet.g[0, 0, 0]
    tangential = jet.ricci[0, 1, 1] / jet.g[0, 1, 1]

    assert radial == pytest.approx(-2.0 / rs ** 3, rel=1e-9)
    assert tangential == pytest.approx(1.0 / rs ** 3, rel=1e-9)
    assert radial == pytest.approx(-2.5e-4, abs=2e-5)


def test_metric_tensor_is_conformally_flat(schwarzschild):
    pts = np.array([[3.0, 4.0, 0.0], [0.0, 0.0, 7.0]])
    g = metric_tensor(schwarzschild, pts)

    for k, r in enumerate((5.0, 7.0)):
        np.testing.assert_allclose(g[k], phi(1.0, r) ** 4 * np.eye(3), rtol=1e-14)
    np.testing.assert_allclose(volume_density(schwarzschild, pts), [phi(1.0, 5.0) ** 6, phi(1.0, 7.0) ** 6])


@pytest.mark.parametrize("params", [MetricParams(m=1.0), MetricParams(m=1.0, perturbation={"kind": "conformal_dipole", "B": (0.5, -0.2, 0.1)})])
def test_riemann_reconstructed_from_ricci(params):
    jet = eval_jet(params, _points())
    R = jet.riemann
    rel = np.abs(R - riemann_from_ricci(jet)) / (1.0 + np.abs(R))

    assert rel.max() < 1e-9


def test_riemann_has_algebraic_symmetries(dipole):
    R = eval_jet(dipole, _points()).riemann

    np.testing.assert_allclose(R, -np.swapaxes(R, 1, 2), atol=1e-15)
    np.testing.assert_allclose(R, -np.swapaxes(R, 3, 4), atol=1e-15)
    np.testing.assert_allclose(R, np.transpose(R, (0, 3, 4, 1, 2)), atol=1e-15)
    cyclic = R + np.transpose(R, (0, 1, 3, 4, 2)) + np.transpose(R, (0, 1, 4, 2, 3))
    assert np.abs(cyclic).max() < 1e-15


def test_contracted_bianchi_identity(dipole):
    assert bianchi_residual(eval_jet(dipole, _points())).max() < 1e-8


def test_analytic_ricci_gradient_matches_finite_differences(dipole):
    jet = eval_jet(dipole, _points(radii=(6.0, 12.0)))
    fd = _fd_dricci(dipole, jet.point)

    scale = np.abs(jet.dricci).max()
    assert np.abs(jet.dricci - fd).max() < 1e-7 * scale


def test_axial_anisotropy_closed_form_derivatives_match_finite_differences():
    field = AxialAnisotropy(0.7)
    y = _points(radii=(4.0, 9.0))
    P, dP, ddP = field.derivatives(y)
    fP, fdP, fddP = _fd_jet(field, y)

    np.testing.assert_allclose(P, fP, rtol=1e-14)
    assert np.abs(dP - fdP).max() < 1e-8 * np.abs(dP).max()
    assert np.abs(ddP - fddP).max() < 1e-6 * np.abs(ddP).max()


def test_axial_anisotropy_passes_its_decay_audit():
    validate_decay(MetricParams(m=1.0, perturbation=axial_anisotropy(0.5)))


def test_decay_audit_rejects_understated_bounds():
    field = AxialAnisotropy(1.0)
    pert = CustomDecaying(tensor=field, derivatives=field.derivatives, bounds=(0.1, 2.0, 8.0))

    with pytest.raises(MetricValidityError, match="order-0"):
        validate_decay(MetricParams(m=1.0, perturbation=pert))


def test_schwarzschild_ricci_decays_like_inverse_cube(schwarzschild):
    assert decay_audit(schwarzschild, radii=(10.0, 50.0, 200.0)) <= 8.0


def test_point_inside_unit_ball_is_rejected(schwarzschild):
    with pytest.raises(DomainError):
        eval_jet(schwarzschild, [[0.5, 0.0, 0.0]])


def test_translated_metric_measures_distance_from_its_center():
    params = MetricParams(m=1.0, center=(0.0, 2.0, 0.0))

    with pytest.raises(DomainError):
        eval_jet(params, [[0.0, 2.5, 0.0]])
    np.testing.assert_allclose(metric_tensor(params, [[0.0, 12.0, 0.0]])[0], phi(1.0, 10.0) ** 4 * np.eye(3))


def test_indefinite_perturbation_is_a_validity_error():
    tensor, derivatives = _constant_tensor(-2.0)
    pert = CustomDecaying(tensor=tensor, derivatives=derivatives, bounds=(1.0, 1.0, 1.0))

    with pytest.raises(MetricValidityError):
        eval_jet(MetricParams(m=1.0, perturbation=pert), [[10.0, 0.0, 0.0]])


def test_jet_without_gradient_skips_ricci_derivative(schwarzschild):
    assert eval_jet(schwarzschild, [[6.0, 0.0, 0.0]], with_gradient=False).dricci is None
