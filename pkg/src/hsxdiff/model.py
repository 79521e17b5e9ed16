"""Physical parameters and closed-form coefficients of the hard-sphere mixture."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Optional

import numpy as np

PotentialFn = Callable[[np.ndarray], np.ndarray]


class ParameterError(ValueError):
    pass


def ball_volume(d: int, diameter: float) -> float:
    """Volume of a d-dimensional ball with the given diameter."""
    radius = 0.5 * diameter
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * radius**d


@dataclass(frozen=True)
class ModelParams:
    """Nondimensional parameters of the two-species system.

    The external potentials are linear, ``V~_i(x) = v_i x``, unless a callable
    ``Vt_r``/``Vt_b`` is given. Both describe the *unscaled* potential; the
    drift uses ``V_i = V~_i / D_i``.
    """

    d: int = 2
    eps_r: float = 0.01
    eps_b: float = 0.01
    D_r: float = 1.0
    D_b: float = 1.0
    N_r: float = 200.0
    N_b: float = 200.0
    v_r: float = 2.0
    v_b: float = 1.0
    x_lo: float = -0.5
    x_hi: float = 0.5
    Vt_r: Optional[PotentialFn] = field(default=None, compare=False, repr=False)
    Vt_b: Optional[PotentialFn] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ParameterError(f"dimension d must be 2 or 3, got {self.d}")
        for name in ("eps_r", "eps_b", "D_r", "D_b", "N_r", "N_b", "v_r", "v_b", "x_lo", "x_hi"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")
        if self.eps_r < 0 or self.eps_b < 0:
            raise ParameterError("particle diameters must be nonnegative")
        if not (self.D_r > 0 and self.D_b > 0):
            raise ParameterError(f"diffusivities must be positive, got D_r={self.D_r}, D_b={self.D_b}")
        if not (self.N_r > 0 and self.N_b > 0):
            raise ParameterError("particle numbers must be positive")
        if not self.x_hi > self.x_lo:
            raise ParameterError("domain must satisfy x_lo < x_hi")

    @property
    def eps_br(self) -> float:
        return 0.5 * (self.eps_r + self.eps_b)

    @property
    def length(self) -> float:
        return self.x_hi - self.x_lo

    def is_symmetric(self, rtol: float = 1e-12) -> bool:
        return math.isclose(self.eps_r, self.eps_b, rel_tol=rtol, abs_tol=0.0) and math.isclose(
            self.D_r, self.D_b, rel_tol=rtol
        )

    def potentials(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Rescaled potentials ``(V_r, V_b)`` at the points ``x``."""
        x = np.asarray(x, dtype=float)
        vt_r = self.Vt_r(x) if self.Vt_r is not None else self.v_r * x
        vt_b = self.Vt_b(x) if self.Vt_b is not None else self.v_b * x
        return np.asarray(vt_r, dtype=float) / self.D_r, np.asarray(vt_b, dtype=float) / self.D_b

    def potential_gradients(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        if self.Vt_r is None and self.Vt_b is None:
            ones = np.ones_like(x)
            return self.v_r / self.D_r * ones, self.v_b / self.D_b * ones
        V_r, V_b = self.potentials(x)
        return np.gradient(V_r, x), np.gradient(V_b, x)

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    @classmethod
    def from_mapping(cls, values: dict) -> "ModelParams":
        known = {f.name for f in fields(cls) if f.name not in ("Vt_r", "Vt_b")}
        unknown = set(values) - known
        if unknown:
            raise ParameterError(f"unknown model keys: {sorted(unknown)}")
        kwargs = {}
        for key, val in values.items():
            kwargs[key] = int(val) if key == "d" else float(val)
        return cls(**kwargs)

    def to_mapping(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("Vt_r", "Vt_b")}


@dataclass(frozen=True)
class Coefficients:
    d: int
    eps_ref: float
    D_r: float
    D_b: float
    alpha: float
    beta_r: float
    beta_b: float
    gamma_r: float
    gamma_b: float
    alpha_bar: float
    gamma_bar: float
    theta_r: float
    theta_b: float
    a_r: float
    a_b: float
    a_br: float

    # eps_i^d and eps_br^d, i.e. a_i * eps_ref^d
    @property
    def c_r(self) -> float:
        return self.a_r * self.eps_ref**self.d

    @property
    def c_b(self) -> float:
        return self.a_b * self.eps_ref**self.d

    @property
    def c_br(self) -> float:
        return self.a_br * self.eps_ref**self.d

    @property
    def delta(self) -> float:
        """Expansion parameter eps_ref^d."""
        return self.eps_ref**self.d


def compute_coefficients(params: ModelParams, eps_ref: Optional[float] = None) -> Coefficients:
    """Geometry coefficients for balls plus size ratios and AGF defect weights.

    ``eps_ref`` defaults to ``max(eps_r, eps_b)`` so that all size ratios are
    at most one.
    """
    d = params.d
    D_r, D_b = params.D_r, params.D_b
    if not (D_r > 0 and D_b > 0):
        raise ParameterError("diffusivities must be positive")
    if eps_ref is None:
        eps_ref = max(params.eps_r, params.eps_b)
    if eps_ref < 0:
        raise ParameterError("eps_ref must be nonnegative")
    if eps_ref == 0:
        if params.eps_r > 0 or params.eps_b > 0:
            raise ParameterError("eps_ref = 0 with nonzero particle diameters")
        a_r = a_b = a_br = 1.0
    else:
        a_r = (params.eps_r / eps_ref) ** d
        a_b = (params.eps_b / eps_ref) ** d
        a_br = (params.eps_br / eps_ref) ** d

    S = D_r + D_b
    two_pi_d = 2.0 * math.pi / d
    alpha = 2.0 * (d - 1) * math.pi / d
    beta_r = two_pi_d * ((d - 1) * D_r + d * D_b) / S
    beta_b = two_pi_d * ((d - 1) * D_b + d * D_r) / S
    gamma_r = two_pi_d * D_r / S
    gamma_b = two_pi_d * D_b / S
    theta_r = D_b * a_br - D_r * a_r
    theta_b = D_r * a_br - D_b * a_b
    delta = eps_ref**d
    return Coefficients(
        d=d,
        eps_ref=eps_ref,
        D_r=D_r,
        D_b=D_b,
        alpha=alpha,
        beta_r=beta_r,
        beta_b=beta_b,
        gamma_r=gamma_r,
        gamma_b=gamma_b,
        alpha_bar=delta * alpha,
        gamma_bar=delta * gamma_r,
        theta_r=theta_r,
        theta_b=theta_b,
        a_r=a_r,
        a_b=a_b,
        a_br=a_br,
    )


def volume_fraction(params: ModelParams) -> float:
    """Global volume fraction ``N_r v_d(eps_r) + N_b v_d(eps_b)``."""
    return params.N_r * ball_volume(params.d, params.eps_r) + params.N_b * ball_volume(params.d, params.eps_b)


def local_volume_density(params: ModelParams, r, b):
    """Pointwise volume density ``v_d(eps_r) r + v_d(eps_b) b``."""
    return ball_volume(params.d, params.eps_r) * np.asarray(r) + ball_volume(params.d, params.eps_b) * np.asarray(b)
