"""Stationary states by constrained entropy minimization and by long-time integration, plus parameter sweeps."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .grid import Grid1D, SystemState
from .model import Coefficients, ModelParams, ParameterError, compute_coefficients
from .timestepper import integrate_mol, stationarity_threshold

log = logging.getLogger(__name__)

CLIP = 1e-14


class NewtonDivergence(RuntimeError):
    def __init__(self, message, residual=math.nan, iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class StationarityError(RuntimeError):
    def __init__(self, message, rhs_norm=math.nan, state=None):
        super().__init__(message)
        self.rhs_norm = rhs_norm
        self.state = state


@dataclass
class StationaryResult:
    grid: Grid1D
    r_inf: np.ndarray
    b_inf: np.ndarray
    chi_r: float
    chi_b: float
    residual_norm: float
    iterations: int
    history: list = field(default_factory=list, repr=False)

    def state(self) -> SystemState:
        return SystemState(self.grid, self.r_inf.copy(), self.b_inf.copy())

    @property
    def mass_r(self) -> float:
        return self.grid.integrate(self.r_inf)

    @property
    def mass_b(self) -> float:
        return self.grid.integrate(self.b_inf)


def equilibrium_pointparticle(params: ModelParams, grid: Optional[Grid1D] = None, n_cells: int = 200) -> SystemState:
    """``(C_r e^{-V_r}, C_b e^{-V_b})`` with constants fixing the masses under trapezoid quadrature."""
    grid = grid or Grid1D.for_params(params, n_cells)
    V_r, V_b = params.potentials(grid.x)
    # shift by the minimum so large potentials do not underflow
    e_r = np.exp(-(V_r - V_r.min()))
    e_b = np.exp(-(V_b - V_b.min()))
    r = params.N_r * e_r / grid.integrate(e_r)
    b = params.N_b * e_b / grid.integrate(e_b)
    return SystemState(grid, r, b)


class StationarySystem:
    """The ``2n + 2`` equations: nodal dual equations and the two mass constraints.

    ``F_r = log r + V_r + alpha (c_r r + c_br b) - chi_r`` and its b twin,
    each species paired with its own multiplier. Unknowns are ordered
    ``[r, b, chi_r, chi_b]``.
    """

    def __init__(self, grid: Grid1D, params: ModelParams, coeffs: Coefficients):
        self.grid = grid
        self.params = params
        self.coeffs = coeffs
        self.V_r, self.V_b = params.potentials(grid.x)
        self.w = grid.weights
        self.n = grid.n_nodes
        c = coeffs
        self.k_rr = c.alpha * c.c_r
        self.k_rb = c.alpha * c.c_br
        self.k_bb = c.alpha * c.c_b

    def split(self, z):
        n = self.n
        return z[:n], z[n : 2 * n], z[2 * n], z[2 * n + 1]

    def residual(self, z):
        r, b, chi_r, chi_b = self.split(z)
        F_r = np.log(r) + self.V_r + self.k_rr * r + self.k_rb * b - chi_r
        F_b = np.log(b) + self.V_b + self.k_rb * r + self.k_bb * b - chi_b
        m_r = self.w @ r - self.params.N_r
        m_b = self.w @ b - self.params.N_b
        return np.concatenate([F_r, F_b, [m_r, m_b]])

    def norm(self, F) -> float:
        """Grid-weighted L2 norm of the nodal part combined with the mass residuals."""
        n = self.n
        return float(np.sqrt(self.w @ (F[:n] ** 2 + F[n : 2 * n] ** 2) + F[2 * n] ** 2 + F[2 * n + 1] ** 2))

    def jacobian(self, z):
        r, b, _, _ = self.split(z)
        n = self.n
        J = np.zeros((2 * n + 2, 2 * n + 2))
        i = np.arange(n)
        J[i, i] = 1.0 / r + self.k_rr
        J[i, n + i] = self.k_rb
        J[n + i, i] = self.k_rb
        J[n + i, n + i] = 1.0 / b + self.k_bb
        J[i, 2 * n] = -1.0
        J[n + i, 2 * n + 1] = -1.0
        J[2 * n, :n] = self.w
        J[2 * n + 1, n : 2 * n] = self.w
        return J

    def initial_guess(self, state: SystemState):
        r, b = state.r, state.b
        w = self.w / self.w.sum()
        chi_r = w @ (np.log(r) + self.V_r + self.k_rr * r + self.k_rb * b)
        chi_b = w @ (np.log(b) + self.V_b + self.k_rb * r + self.k_bb * b)
        return np.concatenate([r, b, [chi_r, chi_b]])


def solve_entropy_stationary(
    params: ModelParams,
    coeffs: Optional[Coefficients] = None,
    tol: float = 1e-8,
    *,
    grid: Optional[Grid1D] = None,
    n_cells: int = 200,
    max_iter: int = 25,
    initial: Optional[SystemState] = None,
) -> StationaryResult:
    """Damped Newton for the constrained entropy minimizer, started from the point-particle equilibrium.

    Each iteration halves the step (at most 40 times) until the residual
    norm decreases, with densities clipped at ``1e-14``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    coeffs = coeffs or compute_coefficients(params)
    grid = grid or (initial.grid if initial is not None else Grid1D.for_params(params, n_cells))
    system = StationarySystem(grid, params, coeffs)
    start = initial or equilibrium_pointparticle(params, grid)
    z = system.initial_guess(start)
    F = system.residual(z)
    norm = system.norm(F)
    history = [norm]
    n = system.n
    it = 0
    while norm > tol:
        if it >= max_iter:
            raise NewtonDivergence(
                f"Newton did not reach {tol:.1e} in {max_iter} iterations (residual {norm:.3e})", norm, it
            )
        dz = np.linalg.solve(system.jacobian(z), -F)
        lam = 1.0
        for _ in range(41):
            z_try = z + lam * dz
            z_try[: 2 * n] = np.maximum(z_try[: 2 * n], CLIP)
            F_try = system.residual(z_try)
            n_try = system.norm(F_try)
            if np.isfinite(n_try) and n_try < norm:
                break
            lam *= 0.5
        else:
            raise NewtonDivergence(f"line search failed at iteration {it} (residual {norm:.3e})", norm, it)
        z, F, norm = z_try, F_try, n_try
        it += 1
        history.append(norm)
    r, b, chi_r, chi_b = system.split(z)
    return StationaryResult(grid, r.copy(), b.copy(), float(chi_r), float(chi_b), norm, it, history)


def equilibrate_longtime(
    params: ModelParams,
    coeffs: Optional[Coefficients] = None,
    tol: Optional[float] = None,
    *,
    state0: Optional[SystemState] = None,
    grid: Optional[Grid1D] = None,
    n_cells: int = 200,
    t_max: float = 1e6,
    rtol: float = 1e-6,
    atol: float = 1e-8,
    form: str = "gradient",
) -> SystemState:
    """Integrate the time-dependent system until ``max |rhs| <= tol`` and return the final state."""
    coeffs = coeffs or compute_coefficients(params)
    if state0 is None:
        state0 = equilibrium_pointparticle(params, grid or Grid1D.for_params(params, n_cells))
    tol = tol if tol is not None else stationarity_threshold(params)
    traj = integrate_mol(
        state0,
        state0.t + t_max,
        params,
        coeffs,
        rtol=rtol,
        atol=atol,
        stop_when_stationary=True,
        stationary_tol=tol,
        keep_states=False,
        form=form,
    )
    final = traj.final
    final.meta.update(rhs_norm=traj.final_rhs_norm, stats=traj.stats, t_final=final.t)
    if not traj.stationary:
        raise StationarityError(
            f"t_max={t_max:g} reached before stationarity (max|rhs| = {traj.final_rhs_norm:.3e})",
            traj.final_rhs_norm,
            final,
        )
    return final


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------

AXES = ("theta_r", "epsilon")


@dataclass
class SweepRecord:
    axis: str
    value: float
    abs_err_r: float = math.nan
    abs_err_b: float = math.nan
    rel_err_r: float = math.nan
    rel_err_b: float = math.nan
    D_r: float = math.nan
    D_b: float = math.nan
    eps: float = math.nan
    theta_r_unscaled: float = math.nan
    newton_iterations: int = -1
    newton_residual: float = math.nan
    mol_steps: int = -1
    rhs_norm: float = math.nan
    mass_drift: float = math.nan
    seconds: float = math.nan
    ok: bool = False
    message: str = ""

    def as_row(self) -> dict:
        return asdict(self)


def params_for_theta(base: ModelParams, theta_scaled: float) -> ModelParams:
    """Parameters whose scaled ``eps^d (D_b a_br - D_r a_r)`` equals ``theta_scaled``; only ``D_r`` moves."""
    c = compute_coefficients(base)
    if c.delta == 0:
        raise ParameterError("the theta axis needs finite particle sizes")
    D_r = (base.D_b * c.a_br - theta_scaled / c.delta) / c.a_r
    if not D_r > 0:
        raise ParameterError(f"theta_r={theta_scaled:g} would need D_r={D_r:g} <= 0")
    return base.with_(D_r=D_r)


def params_for_epsilon(base: ModelParams, eps: float) -> ModelParams:
    return base.with_(eps_r=eps, eps_b=eps)


def l2_errors(grid: Grid1D, a: SystemState | StationaryResult, b: SystemState):
    ra, ba = (a.r_inf, a.b_inf) if isinstance(a, StationaryResult) else (a.r, a.b)
    dr = grid.l2_norm(ra - b.r)
    db = grid.l2_norm(ba - b.b)
    return dr, db, dr / grid.l2_norm(b.r), db / grid.l2_norm(b.b)


def compare_routes(params: ModelParams, n_cells: int = 200, newton_tol: float = 1e-8, **mol_kwargs):
    """Newton minimizer versus long-time state for one parameter set."""
    coeffs = compute_coefficients(params)
    grid = Grid1D.for_params(params, n_cells)
    stat = solve_entropy_stationary(params, coeffs, newton_tol, grid=grid)
    final = equilibrate_longtime(params, coeffs, grid=grid, **mol_kwargs)
    return stat, final, l2_errors(grid, stat, final)


def _sweep_point(task):
    base, axis, value, n_cells, newton_tol, mol_kwargs = task
    rec = SweepRecord(axis=axis, value=float(value))
    t0 = time.perf_counter()
    try:
        params = params_for_theta(base, value) if axis == "theta_r" else params_for_epsilon(base, value)
        c = compute_coefficients(params)
        rec.D_r, rec.D_b, rec.eps = params.D_r, params.D_b, c.eps_ref
        rec.theta_r_unscaled = c.theta_r
        coeffs = c
        grid = Grid1D.for_params(params, n_cells)
        stat = solve_entropy_stationary(params, coeffs, newton_tol, grid=grid)
        rec.newton_iterations = stat.iterations
        rec.newton_residual = stat.residual_norm
        final = equilibrate_longtime(params, coeffs, grid=grid, **mol_kwargs)
        rec.mol_steps = final.meta["stats"]["steps"]
        rec.rhs_norm = final.meta["rhs_norm"]
        rec.mass_drift = max(abs(final.mass_r / params.N_r - 1.0), abs(final.mass_b / params.N_b - 1.0))
        rec.abs_err_r, rec.abs_err_b, rec.rel_err_r, rec.rel_err_b = l2_errors(grid, stat, final)
        rec.ok = True
    except Exception as exc:  # recorded on the point, the sweep carries on
        rec.message = f"{type(exc).__name__}: {exc}"
        if isinstance(exc, NewtonDivergence):
            rec.newton_residual = exc.residual
            rec.newton_iterations = exc.iterations
    rec.seconds = time.perf_counter() - t0
    return rec


def sweep(
    params_base: ModelParams,
    axis: str,
    values: Sequence[float],
    *,
    n_cells: int = 200,
    newton_tol: float = 1e-8,
    jobs: int = 1,
    **mol_kwargs,
) -> list:
    """Run both stationary routes for every value of ``axis`` and record their L2 discrepancies.

    ``axis="theta_r"`` holds the scaled value ``eps^d (D_b a_br - D_r a_r)``
    and adjusts ``D_r`` only; ``axis="epsilon"`` sets both diameters.
    Failures are stored on the record. Results come back sorted by value.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}")
    values = [float(v) for v in values]
    if list(values) != sorted(values):
        raise ValueError("sweep values must be sorted")
    tasks = [(params_base, axis, v, n_cells, newton_tol, mol_kwargs) for v in values]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_sweep_point, tasks))
    else:
        records = [_sweep_point(t) for t in tasks]
    return sorted(records, key=lambda rec: rec.value)


def fit_loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("need at least two positive points")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
