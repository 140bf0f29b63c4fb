"""Compressible neo-Hookean material.

Two variants of the stored energy are available::

    literal:     W = mu/2 (I_c - 3) + kappa/4 (J^2 - 1 - 2 ln J)
    stabilized:  W = mu/2 (I_c - 3) - mu ln J + kappa/4 (J^2 - 1 - 2 ln J)

The literal form carries a reference stress ``P(I) = mu I``; the stabilized
form is stress free at ``F = I`` and is the default.

All functions accept a single deformation gradient ``(3, 3)`` or a batch
``(..., 3, 3)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np

Variant = Literal["literal", "stabilized"]


class InvertedElementError(ArithmeticError):
    """Raised when det F <= 0 at some evaluation point."""


@dataclass(frozen=True)
class MaterialParams:
    mu: float
    kappa: float
    variant: Variant = "stabilized"

    def __post_init__(self):
        if not (self.mu > 0 and self.kappa > 0):
            raise ValueError("mu and kappa must be positive")
        if self.variant not in ("literal", "stabilized"):
            raise ValueError(f"unknown variant {self.variant!r}")


class StressTangent(NamedTuple):
    P: np.ndarray
    A: np.ndarray


def moduli_from_E_nu(E: float, nu: float, variant: Variant = "stabilized") -> MaterialParams:
    if E <= 0:
        raise ValueError("Young's modulus must be positive")
    if nu >= 0.5:
        raise ValueError("nu >= 0.5 is the incompressible limit, not supported")
    if nu <= 0:
        raise ValueError("Poisson ratio must lie in (0, 0.5)")
    mu = E / (2.0 * (1.0 + nu))
    kappa = E / (3.0 * (1.0 - 2.0 * nu))
    return MaterialParams(mu, kappa, variant)


def _det_checked(F: np.ndarray) -> np.ndarray:
    J = np.linalg.det(F)
    if np.any(~(J > 0)):
        raise InvertedElementError("det F <= 0")
    return J


def energy(params: MaterialParams, F) -> np.ndarray | float:
    F = np.asarray(F, dtype=float)
    J = _det_checked(F)
    Ic = np.einsum("...ij,...ij->...", F, F)
    lnJ = np.log(J)
    W = 0.5 * params.mu * (Ic - 3.0) + 0.25 * params.kappa * (J * J - 1.0 - 2.0 * lnJ)
    if params.variant == "stabilized":
        W = W - params.mu * lnJ
    return W


def stress(params: MaterialParams, F) -> np.ndarray:
    stab = 1.0 if params.variant == "stabilized" else 0.0
    F = np.asarray(F, dtype=float)
    return neo_hooke(F, params.mu, params.kappa, stab, need_tangent=False).P


def stress_tangent(params: MaterialParams, F) -> StressTangent:
    """First Piola-Kirchhoff stress and nominal tangent ``A_ijkl = dP_ij/dF_kl``."""
    stab = 1.0 if params.variant == "stabilized" else 0.0
    return neo_hooke(np.asarray(F, dtype=float), params.mu, params.kappa, stab)


def neo_hooke(F: np.ndarray, mu, kappa, stab, need_tangent: bool = True) -> StressTangent:
    """Batched kernel; ``mu``, ``kappa`` and ``stab`` broadcast against ``F[..., 0, 0]``."""
    from ._kernels import neo_hooke_points

    F = np.asarray(F, dtype=float)
    batch = F.shape[:-2]
    Ff = np.ascontiguousarray(F.reshape(-1, 3, 3))
    n = Ff.shape[0]
    args = [np.ascontiguousarray(np.broadcast_to(np.asarray(x, dtype=float), batch).reshape(n))
            for x in (mu, kappa, stab)]
    P = np.empty((n, 3, 3))
    A = np.empty((n, 3, 3, 3, 3) if need_tangent else (1, 3, 3, 3, 3))
    bad = neo_hooke_points(Ff, *args, need_tangent, P, A)
    if bad >= 0:
        raise InvertedElementError("det F <= 0")
    P = P.reshape(batch + (3, 3))
    return StressTangent(P, A.reshape(batch + (3, 3, 3, 3)) if need_tangent else None)


def neo_hooke_reference(F: np.ndarray, mu, kappa, stab, need_tangent: bool = True) -> StressTangent:
    """Plain numpy formulation of :func:`neo_hooke` (used as a cross-check)."""
    J = _det_checked(F)
    H = np.swapaxes(np.linalg.inv(F), -1, -2)
    mu = np.asarray(mu, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    c = 0.5 * kappa * (J * J - 1.0) - mu * stab
    P = mu[..., None, None] * F + c[..., None, None] * H
    if not need_tangent:
        return StressTangent(P, None)
    # d(F^-T)_ij / dF_kl = -H_il H_kj
    A = (kappa * J * J)[..., None, None, None, None] * (
        H[..., :, :, None, None] * H[..., None, None, :, :]
    )
    Ht = np.swapaxes(H, -1, -2)
    A -= c[..., None, None, None, None] * (H[..., :, None, None, :] * Ht[..., None, :, :, None])
    eye = np.eye(3)
    A += mu[..., None, None, None, None] * np.einsum("ik,jl->ijkl", eye, eye)
    return StressTangent(P, A)


def small_strain_tensor(E: float, nu: float) -> np.ndarray:
    """Isotropic linear elasticity tensor C_ijkl (for checks at F = I)."""
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    G = E / (2 * (1 + nu))
    d = np.eye(3)
    return (
        lam * np.einsum("ij,kl->ijkl", d, d)
        + G * (np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d))
    )
