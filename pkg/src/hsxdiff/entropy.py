"""Entropy functionals, entropy variables and the dual-to-primal map.

Four entropies are supported (see :class:`EntropyKind`):

* ``symmetric``   -- equal sizes and diffusivities, ``r log r + ... + abar/2 rho^2``
* ``general``     -- the size-weighted entropy ``E_eps``
* ``expansion``   -- ``E_0`` (order 0) or ``E_0 + eps^d E_1`` (order 1)
* ``regularized`` -- ``r(log r - 1) + ... + tau (1 - gbar rho)(log(1 - gbar rho) - 1)``

Densities written with ``r log r`` have derivative ``log r + 1``; the
regularized density uses ``r(log r - 1)`` whose derivative is ``log r``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .grid import Grid1D, SystemState
from .model import Coefficients, ModelParams, compute_coefficients

VARIANTS = ("symmetric", "general", "expansion", "regularized")


class EntropyDomainError(ValueError):
    """State outside the domain of an entropy (nonpositive density or packing violation)."""

    def __init__(self, message: str, node: Optional[int] = None):
        super().__init__(message if node is None else f"{message} (node {node})")
        self.node = node


class InversionError(RuntimeError):
    pass


@dataclass(frozen=True)
class EntropyKind:
    variant: str
    params: ModelParams
    coeffs: Coefficients
    order: int = 1
    tau: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown entropy variant {self.variant!r}")
        if self.tau < 0:
            raise ValueError("regularization weight tau must be nonnegative")
        if self.variant in ("symmetric", "regularized") and not self.params.is_symmetric():
            raise ValueError(f"{self.variant} entropy requires eps_r == eps_b and D_r == D_b")
        if self.variant == "expansion" and self.order not in (0, 1):
            raise ValueError("expansion order must be 0 or 1")

    @classmethod
    def symmetric(cls, params: ModelParams, coeffs: Coefficients | None = None) -> "EntropyKind":
        return cls("symmetric", params, coeffs or compute_coefficients(params))

    @classmethod
    def general(cls, params: ModelParams, coeffs: Coefficients | None = None) -> "EntropyKind":
        return cls("general", params, coeffs or compute_coefficients(params))

    @classmethod
    def expansion(cls, params: ModelParams, order: int = 1, coeffs: Coefficients | None = None) -> "EntropyKind":
        return cls("expansion", params, coeffs or compute_coefficients(params), order=order)

    @classmethod
    def regularized(cls, params: ModelParams, tau: float, coeffs: Coefficients | None = None) -> "EntropyKind":
        return cls("regularized", params, coeffs or compute_coefficients(params), tau=tau)

    def interaction_matrix(self) -> tuple[float, float, float]:
        """Coefficients ``(k_rr, k_rb, k_bb)`` of the quadratic interaction ``1/2 (k_rr r^2 + 2 k_rb rb + k_bb b^2)``."""
        c = self.coeffs
        if self.variant in ("symmetric", "regularized"):
            return c.alpha_bar, c.alpha_bar, c.alpha_bar
        if self.variant == "expansion" and self.order == 0:
            return 0.0, 0.0, 0.0
        if self.variant == "expansion":
            dlt = c.delta
            return c.alpha * c.a_r * dlt, c.alpha * c.a_br * dlt, c.alpha * c.a_b * dlt
        return c.alpha * c.c_r, c.alpha * c.c_br, c.alpha * c.c_b


@dataclass
class EntropyVariables:
    u: np.ndarray
    v: np.ndarray
    kind: EntropyKind
    grid: Grid1D


def _xlogx(f):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(f > 0, f * np.log(np.where(f > 0, f, 1.0)), 0.0)


def _check_nonnegative(r, b):
    bad = np.flatnonzero((r < 0) | (b < 0) | ~np.isfinite(r) | ~np.isfinite(b))
    if bad.size:
        raise EntropyDomainError("negative or non-finite density", int(bad[0]))


def _check_positive(r, b):
    bad = np.flatnonzero(~((r > 0) & (b > 0)))
    if bad.size:
        raise EntropyDomainError("entropy variables need strictly positive densities", int(bad[0]))


def _check_packing(rho, gamma_bar):
    bad = np.flatnonzero(gamma_bar * rho >= 1.0)
    if bad.size:
        raise EntropyDomainError("total density reached the packing bound 1/gamma_bar", int(bad[0]))


def entropy_density(r, b, V_r, V_b, kind: EntropyKind):
    """Pointwise entropy density."""
    k_rr, k_rb, k_bb = kind.interaction_matrix()
    quad = 0.5 * (k_rr * r * r + 2.0 * k_rb * r * b + k_bb * b * b)
    if kind.variant == "regularized":
        g = kind.coeffs.gamma_bar
        s = 1.0 - g * (r + b)
        reg = kind.tau * s * (np.log(s) - 1.0) if kind.tau > 0 else 0.0
        return _xlogx(r) - r + _xlogx(b) - b + r * V_r + b * V_b + quad + reg
    return _xlogx(r) + _xlogx(b) + r * V_r + b * V_b + quad


def entropy_value(state: SystemState, kind: EntropyKind) -> float:
    """Trapezoid quadrature of the entropy density."""
    r, b = state.r, state.b
    _check_nonnegative(r, b)
    if kind.variant == "regularized" and kind.tau > 0:
        _check_packing(r + b, kind.coeffs.gamma_bar)
    V_r, V_b = kind.params.potentials(state.grid.x)
    return state.grid.integrate(entropy_density(r, b, V_r, V_b, kind))


def entropy_gradient(r, b, V_r, V_b, kind: EntropyKind):
    """Nodal functional derivatives ``(dE/dr, dE/db)``; no domain checks."""
    k_rr, k_rb, k_bb = kind.interaction_matrix()
    u = np.log(r) + V_r + k_rr * r + k_rb * b
    v = np.log(b) + V_b + k_rb * r + k_bb * b
    if kind.variant == "regularized":
        if kind.tau > 0:
            g = kind.coeffs.gamma_bar
            shift = kind.tau * g * np.log(1.0 - g * (r + b))
            u = u - shift
            v = v - shift
    else:
        u = u + 1.0
        v = v + 1.0
    return u, v


def entropy_variables(state: SystemState, kind: EntropyKind) -> EntropyVariables:
    r, b = state.r, state.b
    _check_positive(r, b)
    if kind.variant == "regularized" and kind.tau > 0:
        _check_packing(r + b, kind.coeffs.gamma_bar)
    V_r, V_b = kind.params.potentials(state.grid.x)
    u, v = entropy_gradient(r, b, V_r, V_b, kind)
    return EntropyVariables(u, v, kind, state.grid)


def entropy_hessian(r, b, kind: EntropyKind) -> np.ndarray:
    """Nodal 2x2 Hessian of the entropy density, shape ``(n, 2, 2)``."""
    k_rr, k_rb, k_bb = kind.interaction_matrix()
    reg = 0.0
    if kind.variant == "regularized" and kind.tau > 0:
        g = kind.coeffs.gamma_bar
        reg = kind.tau * g * g / (1.0 - g * (r + b))
    H = np.empty(np.shape(r) + (2, 2))
    H[..., 0, 0] = 1.0 / r + k_rr + reg
    H[..., 0, 1] = H[..., 1, 0] = k_rb + reg
    H[..., 1, 1] = 1.0 / b + k_bb + reg
    return H


def dual_hessian(state: SystemState, params: ModelParams, coeffs: Coefficients, tau: float = 0.0) -> np.ndarray:
    """Hessian of the regularized density ``h~`` at every node, shape ``(n, 2, 2)``.

    Symmetric positive definite in the interior of the admissible set.
    """
    r, b = state.r, state.b
    _check_positive(r, b)
    if tau > 0:
        _check_packing(r + b, coeffs.gamma_bar)
    return _reg_hessian(r, b, coeffs.alpha_bar, coeffs.gamma_bar, tau)


def _reg_hessian(r, b, alpha_bar, gamma_bar, tau):
    reg = tau * gamma_bar**2 / (1.0 - gamma_bar * (r + b)) if tau > 0 else 0.0
    H = np.empty(np.shape(r) + (2, 2))
    H[..., 0, 0] = 1.0 / r + reg + alpha_bar
    H[..., 0, 1] = H[..., 1, 0] = reg + alpha_bar
    H[..., 1, 1] = 1.0 / b + reg + alpha_bar
    return H


def h_prime(r, b, V_r, V_b, alpha_bar, gamma_bar, tau):
    """Gradient of ``h~``: ``log r - tau gbar log(1 - gbar rho) + abar rho + V_r`` and its b twin."""
    rho = r + b
    common = alpha_bar * rho
    if tau > 0:
        common = common - tau * gamma_bar * np.log(1.0 - gamma_bar * rho)
    return np.log(r) + common + V_r, np.log(b) + common + V_b


def solve_density_fixed_point(S, gamma_bar: float, exponent: float, iters: int = 80):
    """Root ``z`` of ``z = S (1 - gbar z)^exponent`` for ``S > 0``.

    The right-hand side is nonincreasing in ``z`` so the root in
    ``(0, min(S, 1/gbar))`` is unique; bisection, vectorised over ``S``.
    """
    S = np.asarray(S, dtype=float)
    if exponent == 0 or gamma_bar == 0:
        return S.copy()
    lo = np.zeros_like(S)
    hi = np.minimum(S, 1.0 / gamma_bar)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        f = mid - S * (1.0 - gamma_bar * mid) ** exponent
        pos = f > 0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
    return 0.5 * (lo + hi)


def _initial_guess(u, v, V_r, V_b, alpha_bar, gamma_bar, tau, sweeps=8):
    k = tau * gamma_bar
    rho = np.zeros_like(u)
    for _ in range(sweeps):
        x = u - alpha_bar * rho - V_r
        y = v - alpha_bar * rho - V_b
        m = np.maximum(x, y)
        ex, ey = np.exp(x - m), np.exp(y - m)
        S = np.exp(m) * (ex + ey)
        z = solve_density_fixed_point(S, gamma_bar, k)
        if k > 0:
            # the root may round onto the packing bound; stay strictly inside
            z = np.minimum(z, (1.0 - 1e-14) / gamma_bar)
        z = np.maximum(z, np.finfo(float).tiny)
        # r + b = z with the split fixed by exp(x) : exp(y); avoids underflow of (1 - gbar z)^k
        r = z * ex / (ex + ey)
        b = z * ey / (ex + ey)
        new_rho = r + b
        if np.allclose(new_rho, rho, rtol=1e-3, atol=0):
            rho = new_rho
            break
        # damped update; plain iteration oscillates once abar*rho > 1
        rho = 0.5 * (rho + new_rho) if alpha_bar * np.max(new_rho) > 0.5 else new_rho
    return r, b


def invert_h_prime(u, v, V_r, V_b, alpha_bar, gamma_bar, tau, tol=1e-12, max_iter=100):
    """Solve ``h~'(r, b) = (u, v)`` nodewise; returns ``(r, b, residual)``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise InversionError("entropy variables must be finite")
    V_r = np.broadcast_to(V_r, u.shape)
    V_b = np.broadcast_to(V_b, u.shape)
    r, b = _initial_guess(u, v, V_r, V_b, alpha_bar, gamma_bar, tau)
    barrier = tau > 0 and gamma_bar > 0

    def resid(r, b):
        fu, fv = h_prime(r, b, V_r, V_b, alpha_bar, gamma_bar, tau)
        return fu - u, fv - v

    def admissible(r, b):
        ok = (r > 0) & (b > 0)
        if barrier:
            ok &= gamma_bar * (r + b) < 1.0
        return ok

    fu, fv = resid(r, b)
    norm = np.hypot(fu, fv)
    for _ in range(max_iter):
        if np.max(norm) <= tol:
            break
        H = _reg_hessian(r, b, alpha_bar, gamma_bar, tau)
        det = H[:, 0, 0] * H[:, 1, 1] - H[:, 0, 1] ** 2
        dr = -(H[:, 1, 1] * fu - H[:, 0, 1] * fv) / det
        db = -(H[:, 0, 0] * fv - H[:, 0, 1] * fu) / det
        step = np.ones_like(r)
        active = norm > tol
        step[~active] = 0.0
        for _ in range(60):
            rn, bn = r + step * dr, b + step * db
            ok = admissible(rn, bn)
            with np.errstate(invalid="ignore", divide="ignore"):
                fun, fvn = resid(np.where(ok, rn, r), np.where(ok, bn, b))
            new_norm = np.hypot(fun, fvn)
            good = ok & ((new_norm < norm) | (step < 1e-3))
            bad = active & ~good
            if not bad.any():
                break
            step = np.where(bad, 0.5 * step, step)
        r = np.where(active, r + step * dr, r)
        b = np.where(active, b + step * db, b)
        fu, fv = resid(r, b)
        norm = np.hypot(fu, fv)
    res = float(np.max(norm))
    if res > tol:
        raise InversionError(f"entropy-gradient inversion did not converge: residual {res:.3e}")
    return r, b, res


def invert_entropy_gradient(vars: EntropyVariables, tol: float = 1e-12, max_iter: int = 100) -> SystemState:
    """Map entropy variables back to densities for the ``h~`` family (symmetric / regularized kinds)."""
    kind = vars.kind
    if kind.variant not in ("symmetric", "regularized"):
        raise ValueError("inversion is implemented for the symmetric and regularized entropies")
    c = kind.coeffs
    V_r, V_b = kind.params.potentials(vars.grid.x)
    u, v = vars.u, vars.v
    if kind.variant == "symmetric":
        # r log r form: shift to the r(log r - 1) convention
        u, v = u - 1.0, v - 1.0
    r, b, res = invert_h_prime(u, v, V_r, V_b, c.alpha_bar, c.gamma_bar, kind.tau, tol=tol, max_iter=max_iter)
    state = SystemState(vars.grid, r, b)
    state.meta["inversion_residual"] = res
    return state
