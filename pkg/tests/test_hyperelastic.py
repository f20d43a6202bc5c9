"""
Tests for the neo-Hookean law and the quadrature rules.
"""
import numpy as np
import pytest
from pydantic import ValidationError

from mechanics.hyperelastic import (
    MaterialParams,
    cauchy_stress,
    combined_tensor,
    deformation_gradient,
    hencky_strain,
    moduli,
    pullback_D,
)
from mechanics.quadrature import full_rule, gauss_legendre, reduced_rule
from utils.error_handler import GeometryError, InvertedElementError


def test_lame_coefficients(material):
    assert material.mu == pytest.approx(500.0 / 2.8)
    assert material.lam == pytest.approx(500.0 * 0.4 / (1.4 * 0.2))


def test_material_validation():
    with pytest.raises(ValidationError):
        MaterialParams(E=-1.0, nu=0.3)
    with pytest.raises(ValidationError):
        MaterialParams(E=1.0, nu=0.5)


def test_stress_free_reference_state(material):
    F = np.eye(2)[None]
    np.testing.assert_allclose(cauchy_stress(F, material), 0.0, atol=1e-12)


def test_small_strain_limit(material):
    """sigma -> lambda tr(eps) I + 2 mu eps for small displacement gradients"""
    eps = 1e-7
    H = eps * np.array([[0.3, 0.1], [0.1, -0.2]])
    sigma = cauchy_stress(np.eye(2) + H, material)
    linear = material.lam * np.trace(H) * np.eye(2) + 2.0 * material.mu * H
    np.testing.assert_allclose(sigma, linear, atol=1e-6 * material.E * eps)


def test_stress_is_symmetric(material):
    F = np.array([[1.1, 0.3], [-0.05, 0.92]])
    sigma = cauchy_stress(F, material)
    np.testing.assert_allclose(sigma, sigma.T, atol=1e-12)


def test_moduli_symmetries(material):
    F = np.array([[1.05, 0.2], [0.1, 0.97]])
    C = moduli(F, material)
    np.testing.assert_allclose(C, np.swapaxes(C, 0, 1))
    np.testing.assert_allclose(C, np.swapaxes(C, 2, 3))
    np.testing.assert_allclose(C, np.transpose(C, (2, 3, 0, 1)))


def test_combined_tensor_major_symmetry(material):
    F = np.array([[1.05, 0.2], [0.1, 0.97]])
    D = combined_tensor(F, material)
    # K_ab,ij = K_ba,ji requires D_ijkl = D_jilk
    np.testing.assert_allclose(D, np.transpose(D, (1, 0, 3, 2)), atol=1e-10)


def test_inverted_deformation_detected(material):
    with pytest.raises(InvertedElementError):
        deformation_gradient(np.array([[-2.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(InvertedElementError):
        cauchy_stress(np.array([[0.0, 1.0], [1.0, 0.0]]), material)


def test_vectorised_over_points(material):
    F = np.stack([np.eye(2), np.diag([1.1, 0.9]), np.array([[1.0, 0.2], [0.0, 1.0]])])
    assert cauchy_stress(F, material).shape == (3, 2, 2)
    assert combined_tensor(F, material).shape == (3, 2, 2, 2, 2)


def test_pullback_identity_map(material):
    F = np.array([[1.05, 0.2], [0.1, 0.97]])
    D = combined_tensor(F, material)
    np.testing.assert_allclose(pullback_D(D, np.eye(2)), D)


def test_pullback_scaling(material):
    """A uniform scaling by 2 in 2D leaves D_ref unchanged (|det| = 4, two inverse factors of 1/2)"""
    D = combined_tensor(np.eye(2), material)
    np.testing.assert_allclose(pullback_D(D, 2.0 * np.eye(2)), D)


def test_pullback_rejects_singular_map(material):
    D = combined_tensor(np.eye(2), material)
    with pytest.raises(GeometryError):
        pullback_D(D, np.zeros((2, 2)))


def test_gauss_legendre_exactness():
    x, w = gauss_legendre(3, 0.0, 2.0)
    assert w.sum() == pytest.approx(2.0)
    assert np.dot(w, x**5) == pytest.approx(2.0**6 / 6.0)


def test_rules_cover_every_element(uc1_cell_p2):
    full = full_rule(uc1_cell_p2)
    reduced = reduced_rule(uc1_cell_p2)
    n_elements = sum(int(np.prod([kv.n_elements for kv in p.knot_vectors])) for p in uc1_cell_p2.patches)
    assert full.n_elements == n_elements
    assert reduced.n_elements == n_elements
    assert full.points_per_element == 9
    assert reduced.points_per_element == 4
    # parametric weights sum to one per patch
    assert full.weights.sum() == pytest.approx(len(uc1_cell_p2.patches))
    assert reduced.weights.sum() == pytest.approx(len(uc1_cell_p2.patches))


def test_rule_rejects_zero_points(uc1_cell):
    from mechanics.quadrature import gauss_rule

    with pytest.raises(ValueError):
        gauss_rule(uc1_cell, 0)


def _energy(F, params):
    """W = mu/2 (tr F^T F - d) - mu ln J + lambda/2 (ln J)^2, batched over leading axes."""
    d = F.shape[-1]
    lnJ = np.log(np.linalg.det(F))
    return 0.5 * params.mu * (np.einsum("...ij,...ij->...", F, F) - d) - params.mu * lnJ + 0.5 * params.lam * lnJ**2


def test_stress_matches_energy_derivative(material):
    """sigma = P F^T / J with P the finite-difference derivative of the stored energy"""
    rng = np.random.default_rng(42)
    F = np.eye(2) + 0.3 * rng.standard_normal((4000, 2, 2))
    F = F[np.linalg.det(F) > 0.2][:1000]
    assert F.shape[0] == 1000
    h = 1e-6
    P = np.zeros_like(F)
    for i in range(2):
        for j in range(2):
            step = np.zeros((2, 2))
            step[i, j] = h
            P[:, i, j] = (_energy(F + step, material) - _energy(F - step, material)) / (2 * h)
    expected = P @ np.swapaxes(F, -1, -2) / np.linalg.det(F)[:, None, None]
    sigma = cauchy_stress(F, material)
    error = np.linalg.norm(sigma - expected, axis=(1, 2)) / np.maximum(np.linalg.norm(sigma, axis=(1, 2)), 1.0)
    assert error.max() <= 1e-5


def _rotation(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def test_hencky_strain_vanishes_for_rotations():
    F = np.stack([_rotation(a) for a in (0.0, 0.3, 1.2, np.pi)])
    np.testing.assert_allclose(hencky_strain(F), 0.0, atol=1e-12)


def test_hencky_strain_of_stretch_and_rotation():
    stretch = np.diag([1.2, 0.9])
    E = hencky_strain(_rotation(0.7) @ stretch)
    np.testing.assert_allclose(E, np.diag(np.log([1.2, 0.9])), atol=1e-12)


def test_hencky_strain_small_strain_limit():
    H = 1e-6 * np.array([[1.0, 2.0], [0.5, -1.0]])
    np.testing.assert_allclose(hencky_strain(np.eye(2) + H), 0.5 * (H + H.T), atol=1e-11)


def test_hencky_strain_rejects_inversion():
    with pytest.raises(InvertedElementError):
        hencky_strain(np.diag([1.0, -1.0]))
