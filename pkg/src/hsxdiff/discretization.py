"""Second-order conservative finite differences for the general system.

Fluxes live on the ``n_cells`` interior faces (cell midpoints) and are built
from arithmetic-mean face densities and two-point gradients. The domain
faces carry zero flux. With trapezoid weights ``w`` the semidiscrete
right-hand side is ``rhs = diff([0, J, 0]) / w`` so ``w . rhs`` telescopes to
zero: mass is conserved for every state.

Arrays are handled generically so that complex-step differentiation works
through every routine here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid1D, SystemState
from .model import Coefficients, ModelParams

# interleaved unknowns [r0, b0, r1, b1, ...] with a three-node stencil
BANDWIDTH = 3


@dataclass
class FluxField:
    """Face fluxes including the two zero boundary faces (length ``n_cells + 2``)."""

    J_r: np.ndarray
    J_b: np.ndarray

    @property
    def interior_r(self):
        return self.J_r[1:-1]

    @property
    def interior_b(self):
        return self.J_b[1:-1]


def _pad(J):
    out = np.zeros(J.shape[0] + 2, dtype=J.dtype)
    out[1:-1] = J
    return out


def general_face_fluxes(r, b, V_r, V_b, coeffs: Coefficients, h: float):
    """Interior-face fluxes of the general system (``D_i`` prefactors included)."""
    c = coeffs
    rf = 0.5 * (r[1:] + r[:-1])
    bf = 0.5 * (b[1:] + b[:-1])
    dr = (r[1:] - r[:-1]) / h
    db = (b[1:] - b[:-1]) / h
    dVr = (V_r[1:] - V_r[:-1]) / h
    dVb = (V_b[1:] - V_b[:-1]) / h
    cross = (c.gamma_b * dVb - c.gamma_r * dVr) * rf * bf
    J_r = c.D_r * ((1.0 + c.c_r * c.alpha * rf) * dr + dVr * rf + c.c_br * (c.beta_r * rf * db - c.gamma_r * bf * dr + cross))
    J_b = c.D_b * ((1.0 + c.c_b * c.alpha * bf) * db + dVb * bf + c.c_br * (c.beta_b * bf * dr - c.gamma_b * rf * db - cross))
    return J_r, J_b


def symmetric_face_fluxes(r, b, V_r, V_b, coeffs: Coefficients, h: float):
    """Interior-face fluxes in the total-density form (equal sizes and diffusivities)."""
    c = coeffs
    ab, gb = c.alpha_bar, c.gamma_bar
    rf = 0.5 * (r[1:] + r[:-1])
    bf = 0.5 * (b[1:] + b[:-1])
    rhof = rf + bf
    dr = (r[1:] - r[:-1]) / h
    db = (b[1:] - b[:-1]) / h
    drho = dr + db
    dVr = (V_r[1:] - V_r[:-1]) / h
    dVb = (V_b[1:] - V_b[:-1]) / h
    J_r = (1.0 - gb * rhof) * dr + (ab + gb) * rf * drho + rf * dVr + gb * (dVb - dVr) * rf * bf
    J_b = (1.0 - gb * rhof) * db + (ab + gb) * bf * drho + bf * dVb + gb * (dVr - dVb) * rf * bf
    return c.D_r * J_r, c.D_b * J_b


def gradient_face_fluxes(r, b, V_r, V_b, coeffs: Coefficients, h: float):
    """Interior-face fluxes in gradient-flow form ``M_f grad(u, v) - delta^2 G_f``.

    ``(u, v)`` are the entropy variables of the induced entropy and ``M_f``
    the arithmetic mean of the nodal mobilities. This is the same flux as
    :func:`general_face_fluxes` up to O(h^2), but the semidiscrete entropy
    production ``-sum_f h grad(u,v)^T M_f grad(u,v)`` is exact, so with
    ``G = 0`` (equal sizes and diffusivities) the entropy is a Lyapunov
    function of the semidiscrete system.
    """
    c = coeffs
    rf = 0.5 * (r[1:] + r[:-1])
    bf = 0.5 * (b[1:] + b[:-1])
    # arithmetic mean of nodal mobilities
    rb = 0.5 * (r[1:] * b[1:] + r[:-1] * b[:-1])
    cbr = c.c_br
    m_rr = c.D_r * (rf - c.gamma_r * cbr * rb)
    m_rb = c.D_r * c.gamma_b * cbr * rb
    m_br = c.D_b * c.gamma_r * cbr * rb
    m_bb = c.D_b * (bf - c.gamma_b * cbr * rb)
    dr = r[1:] - r[:-1]
    db = b[1:] - b[:-1]
    # log1p keeps the log differences accurate when neighbouring values are close,
    # which sets the round-off floor of the right-hand side near equilibrium
    du = (np.log1p(dr / r[:-1]) + (V_r[1:] - V_r[:-1]) + c.alpha * (c.c_r * dr + c.c_br * db)) / h
    dv = (np.log1p(db / b[:-1]) + (V_b[1:] - V_b[:-1]) + c.alpha * (c.c_br * dr + c.c_b * db)) / h
    J_r = m_rr * du + m_rb * dv
    J_b = m_br * du + m_bb * dv
    if c.theta_r != 0.0 or c.theta_b != 0.0:
        dr = dr / h
        db = db / h
        pre = c.delta**2 * c.alpha * c.a_br * rf * bf
        J_r = J_r - pre * c.gamma_r * (c.theta_r * dr - c.theta_b * db)
        J_b = J_b - pre * c.gamma_b * (c.theta_b * db - c.theta_r * dr)
    return J_r, J_b


def assemble_fluxes(state: SystemState, params: ModelParams, coeffs: Coefficients) -> FluxField:
    V_r, V_b = params.potentials(state.grid.x)
    J_r, J_b = general_face_fluxes(state.r, state.b, V_r, V_b, coeffs, state.grid.h)
    return FluxField(_pad(J_r), _pad(J_b))


def assemble_symmetric_fluxes(state: SystemState, params: ModelParams, coeffs: Coefficients) -> FluxField:
    if not params.is_symmetric():
        raise ValueError("symmetric flux form requires eps_r == eps_b and D_r == D_b")
    V_r, V_b = params.potentials(state.grid.x)
    J_r, J_b = symmetric_face_fluxes(state.r, state.b, V_r, V_b, coeffs, state.grid.h)
    return FluxField(_pad(J_r), _pad(J_b))


def divergence(J_interior, weights):
    """Nodal divergence of interior-face fluxes with zero boundary flux."""
    return np.diff(_pad(J_interior)) / weights


class Semidiscretization:
    """Right-hand side of the method-of-lines system on a fixed grid.

    ``form`` selects the face flux: ``"general"`` (the PDE written out term
    by term), ``"symmetric"`` (the total-density form) or ``"gradient"``
    (mobility times entropy-variable gradients plus the defect). Potentials and weights are precomputed; :meth:`rhs_packed` acts on the
    interleaved vector and accepts complex input.
    """

    def __init__(self, grid: Grid1D, params: ModelParams, coeffs: Coefficients, form: str = "general"):
        if form not in FORMS:
            raise ValueError(f"unknown flux form {form!r}")
        if form == "symmetric" and not params.is_symmetric():
            raise ValueError("symmetric flux form requires symmetric parameters")
        self.grid = grid
        self.params = params
        self.coeffs = coeffs
        self.form = form
        self.V_r, self.V_b = params.potentials(grid.x)
        self.w = grid.weights
        self.h = grid.h
        self._flux = FORMS[form]

    @property
    def size(self) -> int:
        return 2 * self.grid.n_nodes

    def fluxes(self, r, b):
        return self._flux(r, b, self.V_r, self.V_b, self.coeffs, self.h)

    def rhs_fields(self, r, b):
        J_r, J_b = self.fluxes(r, b)
        return divergence(J_r, self.w), divergence(J_b, self.w)

    def rhs_packed(self, y):
        f_r, f_b = self.rhs_fields(y[0::2], y[1::2])
        out = np.empty(y.shape, dtype=f_r.dtype)
        out[0::2] = f_r
        out[1::2] = f_b
        return out

    def jacobian_banded(self, y):
        return banded_jacobian(self.rhs_packed, y, self.grid.n_nodes)


FORMS = {
    "general": general_face_fluxes,
    "symmetric": symmetric_face_fluxes,
    "gradient": gradient_face_fluxes,
}


def rhs(state: SystemState, params: ModelParams, coeffs: Coefficients):
    """Time derivatives ``(dr/dt, db/dt)`` of the semidiscrete general system."""
    V_r, V_b = params.potentials(state.grid.x)
    J_r, J_b = general_face_fluxes(state.r, state.b, V_r, V_b, coeffs, state.grid.h)
    w = state.grid.weights
    return divergence(J_r, w), divergence(J_b, w)


def banded_jacobian(fun, y, n_nodes: int, step: float = 1e-30):
    """Complex-step Jacobian of an interleaved three-node-stencil map.

    Returns LAPACK banded storage with ``l = u = BANDWIDTH`` (``ab[u + i - j, j]``).
    Six colourings (node mod 3 x species) recover every entry exactly.
    """
    size = 2 * n_nodes
    u = l = BANDWIDTH
    ab = np.zeros((l + u + 1, size))
    rows = np.arange(size)
    row_node = rows // 2
    shift_for = np.array([0, 1, -1])
    y = np.asarray(y, dtype=float)
    for m in range(3):
        q = row_node + shift_for[(m - row_node) % 3]
        valid = (q >= 0) & (q < n_nodes)
        for sigma in range(2):
            cols = 2 * np.arange(m, n_nodes, 3) + sigma
            yp = y.astype(complex)
            yp[cols] += 1j * step
            df = fun(yp).imag / step
            j = 2 * q[valid] + sigma
            i = rows[valid]
            ab[u + i - j, j] = df[i]
    return ab


def banded_matvec(ab, x, l: int = BANDWIDTH, u: int = BANDWIDTH):
    n = x.shape[0]
    out = np.zeros(n, dtype=np.result_type(ab, x))
    for k in range(-l, u + 1):
        # diagonal k: entries J[i, i + k] stored at ab[u - k, i + k]
        if k >= 0:
            out[: n - k] += ab[u - k, k:] * x[k:]
        else:
            out[-k:] += ab[u - k, : n + k] * x[: n + k]
    return out


def banded_to_dense(ab, l: int = BANDWIDTH, u: int = BANDWIDTH):
    n = ab.shape[1]
    A = np.zeros((n, n))
    for j in range(n):
        for i in range(max(0, j - u), min(n, j + l + 1)):
            A[i, j] = ab[u + i - j, j]
    return A
