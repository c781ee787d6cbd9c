import math

import numpy as np
import pytest
import torch

from vidcascade.diffusion import build_linear_schedule, posterior_params


def grid_bayes_posterior(sched, t: int, x_t: float, x0: float):
    """Independent oracle: combine q(x_t | x_{t-1}) and q(x_{t-1} | x0) on a
    dense 1-D grid and integrate the posterior moments numerically."""
    beta = sched.beta(t)
    ab_prev = sched.alpha_bar(t - 1)
    centre = math.sqrt(ab_prev) * x0
    width = math.sqrt(1 - ab_prev) if t > 1 else math.sqrt(beta)
    grid = np.linspace(centre - 14 * width, centre + 14 * width, 400_001)
    like = np.exp(-0.5 * (x_t - math.sqrt(1 - beta) * grid) ** 2 / beta)
    if t > 1:
        prior = np.exp(-0.5 * (grid - centre) ** 2 / (1 - ab_prev))
    else:
        prior = np.ones_like(grid) * (np.abs(grid - x0) < 1e-12)  # q(x_0|x_0) = delta
    density = like * prior
    z = np.trapezoid(density, grid)
    mean = np.trapezoid(grid * density, grid) / z
    var = np.trapezoid(grid**2 * density, grid) / z - mean**2
    return mean, var


def test_boundary_convention_t1():
    sched = build_linear_schedule(4, 0.1, 0.2)
    x_t = torch.tensor([0.3, -0.7])
    x0 = torch.tensor([0.1, 0.5])
    mean, var = posterior_params(x_t, x0, 1, sched)
    assert torch.allclose(mean, x0, atol=1e-12)
    assert var == 0.0


def test_zero_linearity():
    sched = build_linear_schedule(4, 0.1, 0.2)
    z = torch.zeros(3, 2)
    mean, _ = posterior_params(z, z, 3, sched)
    assert torch.equal(mean, z)


def test_density_grid_bayes_oracle_scalar_t3():
    sched = build_linear_schedule(4, 0.1, 0.2)
    x_t, x0 = 0.42, -0.3
    want_mean, want_var = grid_bayes_posterior(sched, 3, x_t, x0)
    mean, var = posterior_params(
        torch.tensor(x_t, dtype=torch.float64), torch.tensor(x0, dtype=torch.float64), 3, sched
    )
    assert abs(float(mean) - want_mean) < 1e-6
    assert abs(var - want_var) < 1e-6


@pytest.mark.parametrize("t", [2, 3, 4])
@pytest.mark.parametrize("pair", [(0.42, -0.3), (-1.1, 0.8), (0.05, 0.02)])
def test_posterior_identity_across_chain(t, pair):
    sched = build_linear_schedule(4, 0.08, 0.3)
    x_t, x0 = pair
    want_mean, want_var = grid_bayes_posterior(sched, t, x_t, x0)
    mean, var = posterior_params(
        torch.tensor(x_t, dtype=torch.float64), torch.tensor(x0, dtype=torch.float64), t, sched
    )
    assert abs(float(mean) - want_mean) < 1e-6
    assert abs(var - want_var) < 1e-6


def test_shape_mismatch():
    sched = build_linear_schedule(4, 0.1, 0.2)
    with pytest.raises(ValueError, match="shape mismatch"):
        posterior_params(torch.zeros(2), torch.zeros(3), 2, sched)
