import numpy as np
import pytest

from hsxdiff import Grid1D, ModelParams, compute_coefficients


@pytest.fixture
def example1():
    """Equal sizes and diffusivities with linear potentials, 200 particles of each species."""
    return ModelParams()


@pytest.fixture
def example1_coeffs(example1):
    return compute_coefficients(example1)


@pytest.fixture
def grid200(example1):
    return Grid1D.for_params(example1, 200)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def smooth_state(grid, rng, base=200.0, amp=0.3, modes=3):
    """Positive random trigonometric profiles around ``base``."""
    x = (grid.x - grid.x_lo) / (grid.x_hi - grid.x_lo)
    r = np.ones_like(x)
    b = np.ones_like(x)
    for k in range(1, modes + 1):
        r += amp / k * rng.uniform(-1, 1) * np.cos(np.pi * k * x + rng.uniform(0, np.pi))
        b += amp / k * rng.uniform(-1, 1) * np.cos(np.pi * k * x + rng.uniform(0, np.pi))
    return base * r, base * b
