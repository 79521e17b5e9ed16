"""Mobility matrices, the asymptotic-gradient-flow defect and admissibility tests."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .grid import SystemState
from .model import Coefficients, ModelParams, compute_coefficients

VARIANTS = ("symmetric", "general", "expansion")


@dataclass(frozen=True)
class MobilityKind:
    variant: str
    params: ModelParams
    coeffs: Coefficients
    order: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown mobility variant {self.variant!r}")
        if self.variant == "symmetric" and not self.params.is_symmetric():
            raise ValueError("symmetric mobility requires eps_r == eps_b and D_r == D_b")
        if self.variant == "expansion" and self.order not in (0, 1):
            raise ValueError("expansion order must be 0 or 1")

    @classmethod
    def symmetric(cls, params, coeffs=None):
        return cls("symmetric", params, coeffs or compute_coefficients(params))

    @classmethod
    def general(cls, params, coeffs=None):
        return cls("general", params, coeffs or compute_coefficients(params))

    @classmethod
    def expansion(cls, params, order=1, coeffs=None):
        return cls("expansion", params, coeffs or compute_coefficients(params), order=order)


@dataclass(frozen=True)
class AdmissibleSet:
    """``{r >= 0, b >= 0, r + b <= 1/gamma_bar}``."""

    gamma_bar: float

    def contains(self, r, b):
        r = np.asarray(r)
        b = np.asarray(b)
        return (r >= 0) & (b >= 0) & (self.gamma_bar * (r + b) <= 1.0)

    def interior(self, r, b):
        r = np.asarray(r)
        b = np.asarray(b)
        return (r > 0) & (b > 0) & (self.gamma_bar * (r + b) < 1.0)


class NodalGradients(NamedTuple):
    dr: np.ndarray
    db: np.ndarray
    dV_r: np.ndarray
    dV_b: np.ndarray


def mobility_arrays(r, b, kind: MobilityKind) -> np.ndarray:
    """Nodal 2x2 mobility, shape ``(n, 2, 2)``. Works for complex input."""
    c = kind.coeffs
    D_r, D_b = kind.params.D_r, kind.params.D_b
    r = np.asarray(r)
    b = np.asarray(b)
    M = np.zeros(r.shape + (2, 2), dtype=np.result_type(r, b, float))
    if kind.variant == "symmetric":
        g = c.gamma_bar
        D = D_r
        M[..., 0, 0] = D * r * (1.0 - g * b)
        M[..., 0, 1] = M[..., 1, 0] = D * g * r * b
        M[..., 1, 1] = D * b * (1.0 - g * r)
        return M
    M[..., 0, 0] = D_r * r
    M[..., 1, 1] = D_b * b
    if kind.variant == "expansion" and kind.order == 0:
        return M
    if kind.variant == "expansion":
        M = M + c.delta * _m1(r, b, c, D_r, D_b)
        return M
    cbr = c.c_br
    M[..., 0, 0] = D_r * r * (1.0 - c.gamma_r * cbr * b)
    M[..., 0, 1] = D_r * c.gamma_b * cbr * r * b
    M[..., 1, 0] = D_b * c.gamma_r * cbr * r * b
    M[..., 1, 1] = D_b * b * (1.0 - c.gamma_b * cbr * r)
    return M


def _m1(r, b, c: Coefficients, D_r, D_b):
    M1 = np.empty(np.shape(r) + (2, 2), dtype=np.result_type(r, b, float))
    s = c.a_br * r * b
    M1[..., 0, 0] = -D_r * c.gamma_r * s
    M1[..., 0, 1] = D_r * c.gamma_b * s
    M1[..., 1, 0] = D_b * c.gamma_r * s
    M1[..., 1, 1] = -D_b * c.gamma_b * s
    return M1


def mobility(state: SystemState, coeffs: Coefficients, kind: MobilityKind) -> np.ndarray:
    if kind.coeffs is not coeffs:
        kind = MobilityKind(kind.variant, kind.params, coeffs, kind.order)
    return mobility_arrays(state.r, state.b, kind)


def is_positive_definite(state: SystemState, coeffs: Coefficients):
    """Nodal flags, margins ``1 - gamma_bar rho`` and the overall verdict.

    The symmetric mobility has ``det M = r b (1 - gamma_bar rho)``, so strict
    interiority is exactly positive definiteness.
    """
    margin = 1.0 - coeffs.gamma_bar * state.rho
    flags = (state.r > 0) & (state.b > 0) & (margin > 0)
    return flags, margin, bool(np.all(flags))


def g_vector(r, b, grads: NodalGradients, coeffs: Coefficients):
    """Defect vector ``G`` separating the general flux from its gradient-flow part."""
    c = coeffs
    pre = c.alpha * c.a_br * r * b
    G_r = pre * c.gamma_r * (c.theta_r * grads.dr - c.theta_b * grads.db)
    G_b = pre * c.gamma_b * (c.theta_b * grads.db - c.theta_r * grads.dr)
    return G_r, G_b


def pde_flux_pointwise(r, b, grads: NodalGradients, coeffs: Coefficients):
    """Flux of the general system, including the ``D_i`` prefactors, from pointwise values."""
    c = coeffs
    dr, db, dVr, dVb = grads
    cross = (c.gamma_b * dVb - c.gamma_r * dVr) * r * b
    J_r = c.D_r * (
        (1.0 + c.c_r * c.alpha * r) * dr + dVr * r + c.c_br * (c.beta_r * r * db - c.gamma_r * b * dr + cross)
    )
    J_b = c.D_b * (
        (1.0 + c.c_b * c.alpha * b) * db + dVb * b + c.c_br * (c.beta_b * b * dr - c.gamma_b * r * db - cross)
    )
    return J_r, J_b


def gradient_flow_flux_pointwise(r, b, grads: NodalGradients, params: ModelParams, coeffs: Coefficients):
    """``M_eps grad(dE_eps/dr, dE_eps/db)`` evaluated with the chain rule."""
    c = coeffs
    dr, db, dVr, dVb = grads
    du = dr / r + dVr + c.alpha * (c.c_r * dr + c.c_br * db)
    dv = db / b + dVb + c.alpha * (c.c_b * db + c.c_br * dr)
    M = mobility_arrays(r, b, MobilityKind("general", params, c))
    return M[..., 0, 0] * du + M[..., 0, 1] * dv, M[..., 1, 0] * du + M[..., 1, 1] * dv


def agf_residual(state_or_rb, grads: NodalGradients, coeffs: Coefficients, params: ModelParams):
    """Nodal difference between the general flux and ``M_eps grad E_eps' - eps^{2d} G``.

    Vanishes identically (up to round-off) for every state: the general
    system *is* the gradient flow of ``E_eps`` plus the ``eps^{2d}`` defect.
    """
    if isinstance(state_or_rb, SystemState):
        r, b = state_or_rb.r, state_or_rb.b
    else:
        r, b = state_or_rb
    J_r, J_b = pde_flux_pointwise(r, b, grads, coeffs)
    F_r, F_b = gradient_flow_flux_pointwise(r, b, grads, params, coeffs)
    G_r, G_b = g_vector(r, b, grads, coeffs)
    d2 = coeffs.delta**2
    return J_r - (F_r - d2 * G_r), J_b - (F_b - d2 * G_b)
