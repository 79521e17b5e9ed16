import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsxdiff.grid import Grid1D, SystemState
from hsxdiff.model import ModelParams, ParameterError, compute_coefficients
from hsxdiff.stationary import (
    NewtonDivergence,
    StationarityError,
    StationarySystem,
    compare_routes,
    equilibrate_longtime,
    equilibrium_pointparticle,
    fit_loglog_slope,
    params_for_epsilon,
    params_for_theta,
    solve_entropy_stationary,
    sweep,
)


def test_flat_potential_gives_uniform_point_particle_state():
    p = ModelParams(eps_r=0.0, eps_b=0.0, v_r=0.0, v_b=0.0, N_r=150.0, N_b=80.0)
    s = equilibrium_pointparticle(p, n_cells=50)
    np.testing.assert_allclose(s.r, 150.0, rtol=1e-14)
    np.testing.assert_allclose(s.b, 80.0, rtol=1e-14)


def test_linear_potential_normalization_constant():
    # V = 2x on [-1/2, 1/2]: the continuous constant is 2N / (e - 1/e)
    p = ModelParams(eps_r=0.0, eps_b=0.0, v_r=2.0, D_r=1.0, N_r=200.0)
    s = equilibrium_pointparticle(p, n_cells=400)
    C = s.r[0] / math.exp(-2.0 * s.grid.x[0])
    assert C == pytest.approx(2 * 200.0 / (math.e - 1 / math.e), rel=1e-5)
    assert s.mass_r == pytest.approx(200.0, rel=1e-13)


@settings(max_examples=25, deadline=None)
@given(
    v_r=st.floats(-4, 4),
    v_b=st.floats(-4, 4),
    N_r=st.floats(1, 500),
    N_b=st.floats(1, 500),
)
def test_point_particle_masses_exact(v_r, v_b, N_r, N_b):
    p = ModelParams(eps_r=0.0, eps_b=0.0, v_r=v_r, v_b=v_b, N_r=N_r, N_b=N_b)
    s = equilibrium_pointparticle(p, n_cells=64)
    assert s.mass_r == pytest.approx(N_r, rel=1e-12)
    assert s.mass_b == pytest.approx(N_b, rel=1e-12)


def test_newton_without_size_reproduces_point_particle_state():
    p = ModelParams(eps_r=0.0, eps_b=0.0, v_r=1.5, v_b=-0.5)
    stat = solve_entropy_stationary(p, n_cells=80, tol=1e-12)
    ref = equilibrium_pointparticle(p, stat.grid)
    np.testing.assert_allclose(stat.r_inf, ref.r, rtol=1e-10)
    np.testing.assert_allclose(stat.b_inf, ref.b, rtol=1e-10)


def test_example_newton_solution(example1, example1_coeffs):
    stat = solve_entropy_stationary(example1, example1_coeffs, 1e-8, n_cells=200)
    assert stat.residual_norm <= 1e-8
    assert stat.mass_r == pytest.approx(200.0, rel=1e-12)
    assert stat.mass_b == pytest.approx(200.0, rel=1e-12)
    assert np.all(stat.r_inf > 0) and np.all(stat.b_inf > 0)
    assert np.all(example1_coeffs.gamma_bar * (stat.r_inf + stat.b_inf) < 1)
    # the entropy variables are constant and equal the multipliers
    V_r, V_b = example1.potentials(stat.grid.x)
    c = example1_coeffs
    mu_r = np.log(stat.r_inf) + V_r + c.alpha * (c.c_r * stat.r_inf + c.c_br * stat.b_inf)
    mu_b = np.log(stat.b_inf) + V_b + c.alpha * (c.c_br * stat.r_inf + c.c_b * stat.b_inf)
    assert np.ptp(mu_r) <= 1e-9 and np.ptp(mu_b) <= 1e-9
    assert np.mean(mu_r) == pytest.approx(stat.chi_r, abs=1e-9)
    assert np.mean(mu_b) == pytest.approx(stat.chi_b, abs=1e-9)
    # crowding pushes the profile flatter than the point-particle one
    pp = equilibrium_pointparticle(example1, stat.grid)
    assert np.max(stat.r_inf) < np.max(pp.r)


def test_residual_history_decreases(example1):
    stat = solve_entropy_stationary(example1, n_cells=100, tol=1e-10)
    h = np.array(stat.history)
    assert h.size == stat.iterations + 1
    assert np.all(np.diff(h) < 0)


def test_jacobian_matches_finite_differences(rng):
    p = ModelParams(eps_r=0.05, eps_b=0.03, D_r=0.6, v_r=1.0, v_b=-2.0)
    c = compute_coefficients(p)
    g = Grid1D.for_params(p, 8)
    sysm = StationarySystem(g, p, c)
    z = sysm.initial_guess(equilibrium_pointparticle(p, g))
    z = z * (1 + 0.05 * rng.uniform(-1, 1, size=z.size))
    J = sysm.jacobian(z)
    fd = np.empty_like(J)
    for j in range(z.size):
        e = np.zeros_like(z)
        e[j] = 1e-6 * max(1.0, abs(z[j]))
        fd[:, j] = (sysm.residual(z + e) - sysm.residual(z - e)) / (2 * e[j])
    assert np.max(np.abs(J - fd)) <= 1e-6 * np.max(np.abs(J))


def test_newton_divergence_reports_residual(example1):
    with pytest.raises(NewtonDivergence) as info:
        solve_entropy_stationary(example1, n_cells=50, tol=1e-30, max_iter=2)
    assert info.value.iterations >= 1
    assert np.isfinite(info.value.residual)
    with pytest.raises(ValueError):
        solve_entropy_stationary(example1, n_cells=50, tol=0.0)


def test_routes_agree_for_symmetric_parameters(example1):
    stat, final, errs = compare_routes(example1, n_cells=80)
    assert max(errs[2], errs[3]) <= 1e-6
    assert final.meta["rhs_norm"] <= 1e-10 * 200.0


def test_longtime_run_reports_exhausted_horizon(example1):
    with pytest.raises(StationarityError) as info:
        equilibrate_longtime(example1, n_cells=40, t_max=1e-3)
    assert info.value.state is not None
    assert info.value.rhs_norm > 0


def test_theta_axis_mapping():
    base = ModelParams()
    assert params_for_theta(base, 8e-5).D_r == pytest.approx(0.2, rel=1e-12)
    assert params_for_theta(base, 0.0).D_r == pytest.approx(1.0, rel=1e-14)
    c = compute_coefficients(params_for_theta(base, 3e-5))
    assert c.delta * c.theta_r == pytest.approx(3e-5, rel=1e-10)
    with pytest.raises(ParameterError):
        params_for_theta(base, 1e-3)
    with pytest.raises(ParameterError):
        params_for_theta(base.with_(eps_r=0.0, eps_b=0.0), 1e-5)
    assert params_for_epsilon(base, 0.02).eps_b == 0.02


def test_sweep_records_failures_and_sorts():
    base = ModelParams()
    recs = sweep(base, "theta_r", [1e-5, 1e-3], n_cells=40)
    assert [r.value for r in recs] == [1e-5, 1e-3]
    assert recs[0].ok and recs[0].newton_iterations >= 1
    assert not recs[1].ok and "D_r" in recs[1].message
    with pytest.raises(ValueError):
        sweep(base, "size", [0.01])
    with pytest.raises(ValueError):
        sweep(base, "epsilon", [0.02, 0.01])


def test_loglog_slope():
    x = np.array([1.0, 2.0, 4.0])
    assert fit_loglog_slope(x, 3 * x**4) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        fit_loglog_slope([1.0], [2.0])
