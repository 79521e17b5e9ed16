"""Discrete linear stability of stationary states.

Perturbations are written in entropy variables ``U = (xi, eta)``. Around a
stationary state the linearized flow reads ``A dU/dt = B U`` with

* ``A = blockdiag(w_i H_i^{-1})``, the mass-weighted inverse entropy Hessian
  (the Hessian of the dual entropy), symmetric positive definite;
* ``B = -sum_f h G_f^T M_f G_f``, the frozen-mobility diffusion operator
  built on the same face stencil as the gradient-form discretization,
  symmetric negative semidefinite with the constants in its kernel.

For unequal sizes or diffusivities the full right-hand side also carries
the defect term. Its linearization defines ``C`` through
``W J_rhs H^{-1} = B + delta^2 C`` with ``delta = eps^d``.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .discretization import Semidiscretization, banded_to_dense
from .grid import Grid1D, SystemState
from .mobility import MobilityKind, mobility_arrays
from .model import Coefficients, ModelParams, compute_coefficients
from .stationary import StationaryResult, solve_entropy_stationary


class StabilityError(RuntimeError):
    pass


@dataclass
class LinearizedOperators:
    A: np.ndarray
    B: np.ndarray
    C: Optional[np.ndarray] = None
    delta2: float = 0.0
    state: Optional[SystemState] = field(default=None, repr=False)
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.A.shape[0]


@dataclass
class SpectrumResult:
    eigenvalues: np.ndarray
    null: np.ndarray
    nonzero: np.ndarray
    max_imag: float
    perturbed: bool
    null_ok: bool = True

    @property
    def n_null(self) -> int:
        return int(self.null.size)

    @property
    def leading(self) -> float:
        """Largest real part among the eigenvalues outside the mass null space."""
        return float(np.max(self.nonzero.real))

    @property
    def stable(self) -> bool:
        return bool(np.all(self.nonzero.real < 0))


def _hessian_blocks(r, b, coeffs: Coefficients):
    c = coeffs
    H = np.empty(r.shape + (2, 2))
    H[:, 0, 0] = 1.0 / r + c.alpha * c.c_r
    H[:, 0, 1] = H[:, 1, 0] = c.alpha * c.c_br
    H[:, 1, 1] = 1.0 / b + c.alpha * c.c_b
    return H


def _block_diag(blocks):
    n = blocks.shape[0]
    out = np.zeros((2 * n, 2 * n))
    i = np.arange(n)
    for a in range(2):
        for s in range(2):
            out[2 * i + a, 2 * i + s] = blocks[:, a, s]
    return out


def diffusion_operator(grid: Grid1D, Mf) -> np.ndarray:
    """``-sum_f h G_f^T M_f G_f`` in interleaved ordering; ``Mf`` has shape ``(n_cells, 2, 2)``."""
    n = grid.n_nodes
    B = np.zeros((2 * n, 2 * n))
    K = Mf / grid.h
    for f in range(grid.n_cells):
        i, j = f, f + 1
        for a in range(2):
            for s in range(2):
                k = K[f, a, s]
                B[2 * i + a, 2 * i + s] -= k
                B[2 * j + a, 2 * j + s] -= k
                B[2 * i + a, 2 * j + s] += k
                B[2 * j + a, 2 * i + s] += k
    return B


def assemble_linearization(
    stat: StationaryResult | SystemState,
    params: ModelParams,
    coeffs: Optional[Coefficients] = None,
    *,
    perturbation: bool = False,
) -> LinearizedOperators:
    """Build ``A``, ``B`` and, optionally, the defect block ``C`` at a stationary state."""
    coeffs = coeffs or compute_coefficients(params)
    state = stat.state() if isinstance(stat, StationaryResult) else stat
    r, b = state.r, state.b
    if not (np.all(r > 0) and np.all(b > 0)):
        raise StabilityError("stationary state touches the boundary of the admissible set")
    grid = state.grid
    H = _hessian_blocks(r, b, coeffs)
    Hinv = np.linalg.inv(H)
    w = grid.weights
    A = _block_diag(w[:, None, None] * Hinv)
    M = mobility_arrays(r, b, MobilityKind("general", params, coeffs))
    if np.any(np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, 1, 2)))[:, 0] < 0) and params.is_symmetric():
        raise StabilityError("mobility is indefinite at the stationary state")
    B = diffusion_operator(grid, 0.5 * (M[1:] + M[:-1]))
    # symmetrize away round-off; the general mobility is symmetric by construction
    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    ops = LinearizedOperators(A, B, state=state, meta={"C": "none"})
    if perturbation:
        delta2 = coeffs.delta**2
        semi = Semidiscretization(grid, params, coeffs, form="gradient")
        J = banded_to_dense(semi.jacobian_banded(state.pack()))
        K_full = (w.repeat(2)[:, None] * J) @ _block_diag(Hinv)
        ops.delta2 = delta2
        ops.C = (K_full - B) / delta2 if delta2 > 0 else np.zeros_like(B)
        ops.meta["C"] = "complex-step Jacobian of the gradient-form right-hand side minus B, divided by eps^(2d)"
    return ops


def spectrum(
    ops: LinearizedOperators, k: Optional[int] = None, *, perturbed: bool = False, null_tol: float = 1e-8
) -> SpectrumResult:
    """Eigenvalues of the pencil ``(B [+ delta^2 C], A)``, largest real part first.

    The two eigenvalues belonging to the conserved masses are separated
    out: they are the two of smallest magnitude and are expected to satisfy
    ``|lambda| <= null_tol * max|lambda|``. ``k`` truncates the nonzero part.
    """
    try:
        if perturbed:
            if ops.C is None:
                raise StabilityError("operators were assembled without the perturbation block")
            vals = scipy.linalg.eig(ops.B + ops.delta2 * ops.C, ops.A, right=False)
        else:
            vals = scipy.linalg.eigh(ops.B, ops.A, eigvals_only=True).astype(complex)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise StabilityError(f"eigensolver failed: {exc}") from exc
    if not np.all(np.isfinite(vals)):
        raise StabilityError("eigensolver returned non-finite values")
    order = np.argsort(np.abs(vals))
    null = vals[order[:2]]
    rest = vals[order[2:]]
    rest = rest[np.argsort(-rest.real)]
    if k is not None:
        rest = rest[:k]
    max_imag = float(np.max(np.abs(vals.imag))) if vals.size else 0.0
    scale = float(np.max(np.abs(vals)))
    null_ok = bool(np.all(np.abs(null) <= null_tol * scale))
    return SpectrumResult(np.sort_complex(vals)[::-1], null, rest, max_imag, perturbed, null_ok)


def stability_verdict(res: SpectrumResult) -> str:
    word = "stable" if res.stable and res.null_ok else "unstable"
    return f"{word} (leading eigenvalue {res.leading:.10g})"


def _leading_pair(task):
    params, n_cells = task
    coeffs = compute_coefficients(params)
    grid = Grid1D.for_params(params, n_cells)
    stat = solve_entropy_stationary(params, coeffs, grid=grid)
    ops = assemble_linearization(stat, params, coeffs, perturbation=True)
    base = spectrum(ops)
    pert = spectrum(ops, perturbed=True)
    return base.leading, pert.leading


def leading_eigenvalue_sweep(params_base: ModelParams, eps_values: Sequence[float], n_cells: int = 200, jobs: int = 1):
    """Leading nonzero eigenvalue of the plain and the perturbed pencil for each ``eps``.

    Returns rows ``(eps, lambda_B, lambda_B+C, |gap|)`` sorted by ``eps``.
    """
    eps_values = sorted(float(e) for e in eps_values)
    tasks = [(params_base.with_(eps_r=e, eps_b=e), n_cells) for e in eps_values]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            pairs = list(pool.map(_leading_pair, tasks))
    else:
        pairs = [_leading_pair(t) for t in tasks]
    return [(e, lb, lp, abs(lp - lb)) for e, (lb, lp) in zip(eps_values, pairs)]
