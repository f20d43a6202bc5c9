"""
Compressible neo-Hookean law in spatial form.

All functions accept arrays with arbitrary leading axes (typically one per
quadrature point) followed by the tensor indices.
"""
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from utils.error_handler import GeometryError, InvertedElementError

logger = logging.getLogger(__name__)


class MaterialParams(BaseModel):
    """Young's modulus E [MPa] and Poisson ratio nu; Lame coefficients are derived."""

    model_config = ConfigDict(frozen=True)

    E: float = Field(..., gt=0.0)
    nu: float = Field(..., gt=-1.0, lt=0.5)

    @property
    def lam(self) -> float:
        return self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))

    @property
    def mu(self) -> float:
        return self.E / (2.0 * (1.0 + self.nu))


def _identity_like(F: np.ndarray) -> np.ndarray:
    d = F.shape[-1]
    return np.broadcast_to(np.eye(d), F.shape)


def _det(F: np.ndarray) -> np.ndarray:
    J = np.linalg.det(F)
    if np.any(~(J > 0.0)):
        raise InvertedElementError(
            "Non-positive deformation gradient determinant",
            details={"min_det": float(np.nanmin(J)) if np.size(J) else None},
        )
    return J


def deformation_gradient(grad_u: np.ndarray) -> np.ndarray:
    """F = I + grad_u; raises InvertedElementError when det F <= 0."""
    grad_u = np.asarray(grad_u, dtype=float)
    F = grad_u + _identity_like(grad_u)
    _det(F)
    return F


def hencky_strain(F: np.ndarray) -> np.ndarray:
    """Logarithmic strain 1/2 ln(F^T F) through the eigen-decomposition of C."""
    F = np.asarray(F, dtype=float)
    _det(F)
    C = np.swapaxes(F, -1, -2) @ F
    w, V = np.linalg.eigh(C)
    return np.einsum("...ik,...k,...jk->...ij", V, 0.5 * np.log(w), V)


def cauchy_stress(F: np.ndarray, params: MaterialParams) -> np.ndarray:
    """sigma = (mu/J)(F F^T - I) + (lambda/J) ln(J) I."""
    F = np.asarray(F, dtype=float)
    J = _det(F)[..., None, None]
    b = F @ np.swapaxes(F, -1, -2)
    eye = _identity_like(F)
    return (params.mu / J) * (b - eye) + (params.lam / J) * np.log(J) * eye


def moduli(F: np.ndarray, params: MaterialParams) -> np.ndarray:
    """C_ijkl = (lambda/J) d_ij d_kl + ((mu - lambda ln J)/J)(d_ik d_jl + d_il d_jk)."""
    F = np.asarray(F, dtype=float)
    d = F.shape[-1]
    J = _det(F)[..., None, None, None, None]
    eye = np.eye(d)
    dd = np.einsum("ij,kl->ijkl", eye, eye)
    sym = np.einsum("ik,jl->ijkl", eye, eye) + np.einsum("il,jk->ijkl", eye, eye)
    return (params.lam / J) * dd + ((params.mu - params.lam * np.log(J)) / J) * sym


def combined_tensor(F: np.ndarray, params: MaterialParams) -> np.ndarray:
    """D_ijkl = C_ikjl + d_ij sigma_kl, so that K_ab,ij = D_ijkl dphi_a/dx_k dphi_b/dx_l."""
    C = moduli(F, params)
    sigma = cauchy_stress(F, params)
    d = F.shape[-1]
    return np.swapaxes(C, -3, -2) + np.einsum("ij,...kl->...ijkl", np.eye(d), sigma)


def pullback_D(D: np.ndarray, J_psi: np.ndarray) -> np.ndarray:
    """
    Pull D back to parametric coordinates of a mapping with Jacobian J_psi[a, b] = dx_a/dxi_b.

    D_ref_ijkl = D_ij(kb)(lb) Jinv_(k,kb) Jinv_(l,lb) |det J_psi|, so that
    K_ab,ij = sum_q w_q D_ref_ijkl dphi_a/dxi_k dphi_b/dxi_l.
    """
    J_psi = np.asarray(J_psi, dtype=float)
    det = np.linalg.det(J_psi)
    if np.any(np.abs(det) <= 1e-300) or not np.all(np.isfinite(det)):
        raise GeometryError("Singular mapping Jacobian in pull-back")
    J_inv = np.linalg.inv(J_psi)
    return np.einsum("...ijmn,...km,...ln->...ijkl", D, J_inv, J_inv) * np.abs(det)[..., None, None, None, None]
