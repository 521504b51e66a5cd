"""Constitutive laws: Hooke's law and a polyconvex compressible hyperelastic law in 2D.

The stored energy is

    W(F) = mu/2 |F|^2 + lam/4 (det F)^2 - (mu + lam/2) ln(det F) + offset

with first Piola stress

    P(F) = mu F + lam/2 (det F)^2 F^{-T} - (mu + lam/2) F^{-T}.

All functions broadcast over leading axes: ``F`` may have shape (..., 2, 2).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

DET_GUARD = 1e-8

# growth exponents of the coercivity estimate (quadratic in |F| and det F)
GROWTH_P = 2
GROWTH_S = 2


class DomainError(ValueError):
    """Deformation gradient outside the admissible set det F > 0."""


class EnergyOffset(enum.Enum):
    # -3mu/2 - lam/4, carried over from the 3D derivation; W(I) = -mu/2 in 2D
    THREE_D_CONSTANT = "three_d_constant"
    # -mu - lam/4, the value for which W(I) = 0 in 2D
    CONSISTENT_2D = "consistent_2d"


def lame_from_young_poisson(young: float, poisson: float) -> tuple[float, float]:
    """Lamé parameters ``(mu, lam)`` from Young's modulus and Poisson ratio."""
    if not young > 0:
        raise ValueError("Young's modulus must be positive")
    if not -1.0 < poisson < 0.5:
        raise ValueError(f"Poisson ratio must lie in (-1, 0.5), got {poisson}")
    mu = young / (2.0 * (1.0 + poisson))
    lam = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson))
    return mu, lam


@dataclass(frozen=True)
class MaterialParams:
    mu: float
    lam: float
    young: float | None = None
    poisson: float | None = None
    energy_offset_mode: EnergyOffset = EnergyOffset.CONSISTENT_2D

    def __post_init__(self):
        if not (self.mu > 0 and self.lam > 0):
            raise ValueError("Lamé parameters must be positive")
        if self.young is not None and self.poisson is not None:
            mu, lam = lame_from_young_poisson(self.young, self.poisson)
            if not (math.isclose(mu, self.mu, rel_tol=1e-12) and math.isclose(lam, self.lam, rel_tol=1e-12)):
                raise ValueError("(mu, lam) inconsistent with (young, poisson)")

    @classmethod
    def from_young_poisson(cls, young: float, poisson: float, **kw) -> "MaterialParams":
        mu, lam = lame_from_young_poisson(young, poisson)
        return cls(mu, lam, young, poisson, **kw)

    @property
    def energy_offset(self) -> float:
        if self.energy_offset_mode is EnergyOffset.THREE_D_CONSTANT:
            return -1.5 * self.mu - 0.25 * self.lam
        return -self.mu - 0.25 * self.lam

    @property
    def satisfies_coercivity(self) -> bool:
        return check_coercivity_condition(self)


@dataclass(frozen=True)
class DeformationState:
    F: np.ndarray
    detF: np.ndarray
    Finv: np.ndarray


def deformation_state(F) -> DeformationState:
    F = np.asarray(F, dtype=float)
    J = _det2(F)
    if np.any(J <= DET_GUARD):
        raise DomainError(f"det F = {np.min(J):.3e} is not admissible")
    return DeformationState(F, J, _inv2(F, J))


def _det2(F):
    return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]


def _inv2(F, J):
    inv = np.empty_like(F)
    inv[..., 0, 0] = F[..., 1, 1]
    inv[..., 1, 1] = F[..., 0, 0]
    inv[..., 0, 1] = -F[..., 0, 1]
    inv[..., 1, 0] = -F[..., 1, 0]
    return inv / J[..., None, None]


def _swap(A):
    return np.swapaxes(A, -1, -2)


def hooke_stress(grad_u, params: MaterialParams) -> np.ndarray:
    """Linear isotropic stress ``lam tr(eps) I + 2 mu eps`` (2D or 3D)."""
    G = np.asarray(grad_u, dtype=float)
    eps = 0.5 * (G + _swap(G))
    tr = np.trace(eps, axis1=-2, axis2=-1)
    n = G.shape[-1]
    return params.lam * tr[..., None, None] * np.eye(n) + 2.0 * params.mu * eps


def stored_energy(F, params: MaterialParams) -> np.ndarray:
    s = deformation_state(F)
    mu, lam = params.mu, params.lam
    frob2 = np.sum(s.F * s.F, axis=(-2, -1))
    return (
        0.5 * mu * frob2
        + 0.25 * lam * s.detF**2
        - (mu + 0.5 * lam) * np.log(s.detF)
        + params.energy_offset
    )


def piola_stress(F, params: MaterialParams) -> np.ndarray:
    s = deformation_state(F)
    mu, lam = params.mu, params.lam
    FinvT = _swap(s.Finv)
    coef = 0.5 * lam * s.detF**2 - (mu + 0.5 * lam)
    return mu * s.F + coef[..., None, None] * FinvT


def tangent_tensor(F, params: MaterialParams) -> np.ndarray:
    """``C[..., i, J, k, L] = dP_iJ / dF_kL``."""
    s = deformation_state(F)
    mu, lam = params.mu, params.lam
    A = s.Finv
    J2 = s.detF**2
    I = np.eye(2)
    C = mu * np.einsum("ik,JL->iJkL", I, I)
    C = C + ((mu + 0.5 * lam - 0.5 * lam * J2)[..., None, None, None, None]
             * np.einsum("...Jk,...Li->...iJkL", A, A))
    C = C + (lam * J2)[..., None, None, None, None] * np.einsum("...Ji,...Lk->...iJkL", A, A)
    return C


def tangent_density(F, grad_v, grad_w, params: MaterialParams) -> np.ndarray:
    """Second variation of the stored energy in directions ``grad_v``, ``grad_w``.

    ``mu Gv:Gw + (mu + lam/2 - lam/2 J^2) (F^-T Gv^T F^-T):Gw + lam J^2 (F^-T:Gv)(F^-T:Gw)``
    """
    s = deformation_state(F)
    mu, lam = params.mu, params.lam
    Gv = np.asarray(grad_v, dtype=float)
    Gw = np.asarray(grad_w, dtype=float)
    FinvT = _swap(s.Finv)
    J2 = s.detF**2
    ddot = lambda X, Y: np.sum(X * Y, axis=(-2, -1))  # noqa: E731
    mixed = ddot(FinvT @ _swap(Gv) @ FinvT, Gw)
    return (
        mu * ddot(Gv, Gw)
        + (mu + 0.5 * lam - 0.5 * lam * J2) * mixed
        + lam * J2 * ddot(FinvT, Gv) * ddot(FinvT, Gw)
    )


def check_coercivity_condition(params: MaterialParams) -> bool:
    """True iff ``lam > 2 mu / (e - 1)``."""
    return params.lam > 2.0 * params.mu / (math.e - 1.0)


def coercivity_constants(params: MaterialParams) -> tuple[float, float]:
    """``(C, D)`` with ``W(F) >= C (|F|^2 + det(F)^2) + D`` when the condition holds."""
    mu, lam = params.mu, params.lam
    C = min(0.5 * mu, 0.25 * lam - (mu + 0.5 * lam) / (2.0 * math.e))
    return C, params.energy_offset


def green_lagrange(F) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    return 0.5 * (_swap(F) @ F - np.eye(F.shape[-1]))


def _stretch_from_strain(E):
    # symmetric positive square root of I + 2E
    w, Q = np.linalg.eigh(np.eye(2) + 2.0 * E)
    if np.any(w <= 0):
        raise DomainError("I + 2E is not positive definite")
    return (Q * np.sqrt(w)) @ Q.T


def expansion_residuals(params: MaterialParams, direction, scales) -> np.ndarray:
    """``|W(F) - lam/2 (tr E)^2 - mu tr(E^2)|`` for ``E = s * direction``."""
    D = np.asarray(direction, dtype=float)
    if not np.allclose(D, D.T):
        raise ValueError("strain direction must be symmetric")
    out = []
    for s in scales:
        E = s * D
        F = _stretch_from_strain(E)
        quad = 0.5 * params.lam * np.trace(E) ** 2 + params.mu * np.trace(E @ E)
        out.append(abs(float(stored_energy(F, params)) - quad))
    return np.array(out)


def expansion_order(params: MaterialParams, direction, scales) -> float:
    """Slope of log residual against log scale of the quadratic expansion at F = I."""
    if params.energy_offset_mode is not EnergyOffset.CONSISTENT_2D:
        raise ValueError("expansion about the natural state needs the 2D-consistent energy offset")
    scales = np.asarray(scales, dtype=float)
    res = expansion_residuals(params, direction, scales)
    if len(scales) < 2 or np.any(res <= 0):
        raise ValueError("degenerate fit: residuals must be positive at two or more scales")
    slope, _ = np.polyfit(np.log(scales), np.log(res), 1)
    return float(slope)
