"""Uniform vertex-centred grid and the paired-density state."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams, local_volume_density


@dataclass(frozen=True)
class Grid1D:
    """``n_cells + 1`` nodes ``x_i = x_lo + i h``; faces sit at the midpoints."""

    x_lo: float
    x_hi: float
    n_cells: int

    def __post_init__(self):
        if self.n_cells < 4:
            raise ValueError(f"need at least 4 cells, got {self.n_cells}")
        if not self.x_hi > self.x_lo:
            raise ValueError("x_hi must exceed x_lo")

    @classmethod
    def for_params(cls, params: ModelParams, n_cells: int = 200) -> "Grid1D":
        return cls(params.x_lo, params.x_hi, n_cells)

    @property
    def n_nodes(self) -> int:
        return self.n_cells + 1

    @property
    def h(self) -> float:
        return (self.x_hi - self.x_lo) / self.n_cells

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.n_nodes)

    @property
    def x_faces(self) -> np.ndarray:
        x = self.x
        return 0.5 * (x[1:] + x[:-1])

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights (dual-cell lengths)."""
        w = np.full(self.n_nodes, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    def integrate(self, f) -> float:
        return float(self.weights @ np.asarray(f))

    def l2_norm(self, f) -> float:
        f = np.asarray(f)
        return float(np.sqrt(self.weights @ (f * f)))

    def face_mean(self, f):
        return 0.5 * (f[1:] + f[:-1])

    def face_grad(self, f):
        return (f[1:] - f[:-1]) / self.h


@dataclass
class SystemState:
    """Nodal densities of both species at time ``t``."""

    grid: Grid1D
    r: np.ndarray
    b: np.ndarray
    t: float = 0.0
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        n = self.grid.n_nodes
        if self.r.shape != (n,) or self.b.shape != (n,):
            raise ValueError(f"fields must have shape ({n},)")

    @property
    def rho(self) -> np.ndarray:
        return self.r + self.b

    def phi(self, params: ModelParams) -> np.ndarray:
        return local_volume_density(params, self.r, self.b)

    @property
    def mass_r(self) -> float:
        return self.grid.integrate(self.r)

    @property
    def mass_b(self) -> float:
        return self.grid.integrate(self.b)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.r)) and np.all(np.isfinite(self.b)))

    def copy(self, **changes) -> "SystemState":
        kw = dict(grid=self.grid, r=self.r.copy(), b=self.b.copy(), t=self.t)
        kw.update(changes)
        return SystemState(**kw)

    # interleaved [r0, b0, r1, b1, ...] ordering used by the implicit solvers
    def pack(self) -> np.ndarray:
        y = np.empty(2 * self.grid.n_nodes)
        y[0::2] = self.r
        y[1::2] = self.b
        return y

    @classmethod
    def unpack(cls, grid: Grid1D, y: np.ndarray, t: float = 0.0) -> "SystemState":
        return cls(grid, y[0::2].copy(), y[1::2].copy(), t)

    @classmethod
    def uniform(cls, grid: Grid1D, r_value: float, b_value: float, t: float = 0.0) -> "SystemState":
        n = grid.n_nodes
        return cls(grid, np.full(n, float(r_value)), np.full(n, float(b_value)), t)
