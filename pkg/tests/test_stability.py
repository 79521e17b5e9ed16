import numpy as np
import pytest

from hsxdiff.grid import Grid1D, SystemState
from hsxdiff.model import ModelParams, compute_coefficients
from hsxdiff.stability import (
    StabilityError,
    assemble_linearization,
    diffusion_operator,
    leading_eigenvalue_sweep,
    spectrum,
    stability_verdict,
)
from hsxdiff.stationary import solve_entropy_stationary


@pytest.fixture(scope="module")
def example_ops():
    p = ModelParams()
    c = compute_coefficients(p)
    stat = solve_entropy_stationary(p, c, 1e-11, n_cells=60)
    return p, c, stat, assemble_linearization(stat, p, c, perturbation=True)


def test_operators_are_symmetric(example_ops):
    _, _, _, ops = example_ops
    A, B = ops.A, ops.B
    assert np.max(np.abs(A - A.T)) <= 1e-12 * np.max(np.abs(A))
    assert np.max(np.abs(B - B.T)) <= 1e-12 * np.max(np.abs(B))
    assert np.all(np.linalg.eigvalsh(A) > 0)


def test_constants_in_kernel_of_B(example_ops):
    _, _, _, ops = example_ops
    n = ops.size
    scale = np.max(np.abs(ops.B))
    for species in range(2):
        e = np.zeros(n)
        e[species::2] = 1.0
        assert np.max(np.abs(ops.B @ e)) <= 1e-12 * scale


def test_B_is_negative_semidefinite_on_random_vectors(example_ops, rng):
    _, _, _, ops = example_ops
    scale = np.max(np.abs(ops.B))
    for _ in range(100):
        x = rng.normal(size=ops.size)
        assert x @ ops.B @ x <= 1e-12 * scale * (x @ x)


def test_A_blocks_are_weighted_inverse_hessians(example_ops):
    p, c, stat, ops = example_ops
    w = stat.grid.weights
    for i in (0, 17, stat.grid.n_nodes - 1):
        r, b = stat.r_inf[i], stat.b_inf[i]
        H = np.array([[1 / r + c.alpha * c.c_r, c.alpha * c.c_br], [c.alpha * c.c_br, 1 / b + c.alpha * c.c_b]])
        blk = ops.A[2 * i : 2 * i + 2, 2 * i : 2 * i + 2]
        np.testing.assert_allclose(blk, w[i] * np.linalg.inv(H), rtol=1e-13)
        # no coupling between distinct nodes
    off = ops.A.copy()
    for i in range(stat.grid.n_nodes):
        off[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = 0
    assert np.all(off == 0)


def test_uniform_state_gives_scaled_laplacian():
    g = Grid1D(0.0, 1.0, 6)
    M = np.array([[2.0, 0.5], [0.5, 1.0]])
    B = diffusion_operator(g, np.broadcast_to(M, (g.n_cells, 2, 2)))
    L = np.zeros((g.n_nodes, g.n_nodes))
    for f in range(g.n_cells):
        L[f, f] -= 1
        L[f + 1, f + 1] -= 1
        L[f, f + 1] += 1
        L[f + 1, f] += 1
    np.testing.assert_allclose(B, np.kron(L, M) / g.h, rtol=1e-14)


def test_pure_diffusion_leading_eigenvalue_is_minus_pi_squared():
    p = ModelParams(eps_r=0.0, eps_b=0.0, v_r=0.0, v_b=0.0)
    stat = solve_entropy_stationary(p, n_cells=100)
    res = spectrum(assemble_linearization(stat, p))
    assert res.n_null == 2 and res.null_ok
    assert res.leading == pytest.approx(-np.pi**2, rel=0.05)
    # both species diffuse independently with D = 1, so the leading value is double
    assert res.nonzero[1].real == pytest.approx(res.leading, rel=1e-10)


def test_example_spectrum_is_real_and_stable(example_ops):
    _, _, _, ops = example_ops
    res = spectrum(ops, k=5)
    assert res.max_imag == 0.0
    assert res.null_ok and res.n_null == 2
    assert res.stable and res.leading < 0
    assert len(res.nonzero) == 5
    assert stability_verdict(res).startswith("stable (leading eigenvalue")


def test_symmetric_perturbation_block_is_round_off(example_ops):
    _, _, _, ops = example_ops
    base = spectrum(ops)
    pert = spectrum(ops, perturbed=True)
    assert pert.null_ok
    assert pert.leading == pytest.approx(base.leading, rel=1e-8)


def test_perturbed_spectrum_needs_C():
    p = ModelParams(v_r=0.0, v_b=0.0)
    g = Grid1D.for_params(p, 10)
    ops = assemble_linearization(SystemState.uniform(g, 50.0, 50.0), p)
    with pytest.raises(StabilityError):
        spectrum(ops, perturbed=True)


def test_boundary_state_rejected():
    p = ModelParams()
    g = Grid1D.for_params(p, 10)
    r = np.full(11, 10.0)
    r[4] = 0.0
    with pytest.raises(StabilityError):
        assemble_linearization(SystemState(g, r, r.copy()), p)


def test_defect_gap_shrinks_with_size():
    rows = leading_eigenvalue_sweep(ModelParams(D_r=2.0), [0.01, 0.02], n_cells=40)
    assert [row[0] for row in rows] == [0.01, 0.02]
    assert all(row[1] < 0 and row[2].real < 0 for row in rows)
    assert rows[0][3] < rows[1][3]
