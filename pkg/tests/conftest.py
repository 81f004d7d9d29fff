"""Shared fixtures and analytic oracles.

The oracles deliberately avoid the package's own code paths: velocities are
plain numpy double sums, trajectories come from scipy's DOP853 at tight
tolerance, and the locally averaged density of a mollified ensemble is the
closed-form convolution of e^{−|u|/ν} with a Gaussian.
"""

import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.special import erfc, erfcx

from hk_particles.kernel import KernelParams
from hk_particles.particles import ParticleEnsemble


@pytest.fixture
def params():
    return KernelParams(nu=0.5, alpha=1.0)


@pytest.fixture
def two_particles():
    return ParticleEnsemble([-1.0, 1.0], [0.5, 0.5])


@pytest.fixture
def random_ensemble():
    rng = np.random.default_rng(7)
    positions = np.sort(rng.uniform(-3.0, 3.0, 25))
    weights = rng.uniform(0.1, 1.0, 25)
    return ParticleEnsemble(positions, weights / weights.sum())


def direct_velocity(positions, weights, nu, alpha=1.0):
    positions = np.asarray(positions, dtype=float)
    disp = positions[None, :] - positions[:, None]
    k = np.asarray(weights) * np.exp(-np.abs(disp) / nu)
    return alpha * (k * disp).sum(axis=1) / k.sum(axis=1)


def reference_positions(positions, weights, nu, t_end, alpha=1.0):
    sol = solve_ivp(
        lambda t, x: direct_velocity(x, weights, nu, alpha),
        (0.0, t_end),
        np.asarray(positions, dtype=float),
        method="DOP853",
        rtol=1e-12,
        atol=1e-14,
    )
    assert sol.success
    return sol.y[:, -1]


def _smoothed_exponential(u, nu, sigma):
    # ∫ e^{−|u−s|/ν} N(s; 0, σ²) ds, each half written so that nothing overflows
    def half(z_arg, lin):
        z = z_arg / math.sqrt(2.0)
        with np.errstate(over="ignore", invalid="ignore"):
            stable = erfcx(z) * np.exp(-(u * u) / (2 * sigma * sigma))
            direct = np.exp(sigma * sigma / (2 * nu * nu) + lin) * erfc(z)
        return np.where(z >= 0, stable, direct)

    right = half(sigma / nu - u / sigma, -u / nu)
    left = half(sigma / nu + u / sigma, u / nu)
    return 0.5 * (right + left)


def mollified_g(x, ens, nu, sigma):
    """g = e^{−|·|/ν} * (ens mollified at width σ), exactly."""
    x = np.asarray(x, dtype=float)
    u = x[:, None] - ens.positions[None, :]
    return (ens.weights * _smoothed_exponential(u, nu, sigma)).sum(axis=1)


@pytest.fixture
def oracle_velocity():
    return direct_velocity


@pytest.fixture
def oracle_positions():
    return reference_positions


@pytest.fixture
def oracle_mollified_g():
    return mollified_g
