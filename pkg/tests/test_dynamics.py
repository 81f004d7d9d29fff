import logging
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hk_particles import dynamics
from hk_particles.continuum import check_concentration_identity, identity_rate
from hk_particles.dynamics import (
    SimulationConfig,
    check_proposition,
    cluster_centers,
    cluster_spans,
    count_density_peaks,
    diameter_bound,
    diagnostics,
    simulate,
    step_euler,
    step_midpoint,
    velocity_fast,
    velocity_naive,
)
from hk_particles.errors import ConfigError, NumericalError
from hk_particles.kernel import KernelParams
from hk_particles.particles import TWO_BUMP, ParticleEnsemble, discretize


# =============================================================================
# Velocity law
# =============================================================================

def test_two_particle_velocity(two_particles, params):
    expected = 2 * math.exp(-4) / (1 + math.exp(-4))
    for v in (velocity_naive(two_particles, params), velocity_fast(two_particles, params)):
        np.testing.assert_allclose(v, [expected, -expected], rtol=1e-14)


def test_single_particle_does_not_move(params):
    ens = ParticleEnsemble([0.7], [1.0])
    assert velocity_fast(ens, params)[0] == 0.0
    assert velocity_naive(ens, params)[0] == 0.0


def test_velocity_matches_direct_oracle(random_ensemble, params, oracle_velocity):
    expected = oracle_velocity(random_ensemble.positions, random_ensemble.weights, params.nu)
    np.testing.assert_allclose(velocity_naive(random_ensemble, params), expected, rtol=1e-12, atol=1e-13)


def test_alpha_scales_velocity(random_ensemble):
    slow = velocity_fast(random_ensemble, KernelParams(nu=0.5, alpha=1.0))
    fast = velocity_fast(random_ensemble, KernelParams(nu=0.5, alpha=3.0))
    np.testing.assert_allclose(fast, 3.0 * slow, rtol=1e-15)


@settings(max_examples=100, deadline=None)
@given(
    n=st.integers(2, 2000),
    decimals=st.integers(1, 12),
    nu=st.sampled_from([0.1, 0.5, 2.0]),
    seed=st.integers(0, 2**16),
)
def test_fast_velocity_equals_naive(n, decimals, nu, seed):
    rng = np.random.default_rng(seed)
    # coarse rounding produces ties, which from_arrays merges
    xs = np.round(rng.uniform(-10, 10, n), decimals)
    ens = ParticleEnsemble.from_arrays(xs, rng.uniform(1e-3, 1.0, n))
    p = KernelParams(nu=nu)
    naive = velocity_naive(ens, p)
    span = float(ens.positions[-1] - ens.positions[0])
    np.testing.assert_allclose(velocity_fast(ens, p), naive, rtol=1e-11, atol=1e-11 * (span + nu))


@pytest.mark.slow
def test_fast_path_speedup(params):
    rng = np.random.default_rng(11)
    ens = ParticleEnsemble.from_arrays(rng.uniform(-10, 10, 10_000), np.full(10_000, 1e-4))
    velocity_fast(ens, params)

    start = time.perf_counter()
    velocity_fast(ens, params)
    fast = time.perf_counter() - start
    start = time.perf_counter()
    velocity_naive(ens, params)
    naive = time.perf_counter() - start

    speedup = naive / max(fast, 1e-9)
    logging.getLogger(__name__).info("fast path speedup at n=10^4: %.1fx", speedup)
    # 20x is typical; slow CI machines only have to show a clear gain
    assert speedup >= 5.0


def test_fast_velocity_handles_unsorted_positions(random_ensemble, params):
    order = np.random.default_rng(3).permutation(len(random_ensemble))
    positions = random_ensemble.positions[order]
    weights = random_ensemble.weights[order]
    v = dynamics._fast(positions, weights, params)
    np.testing.assert_allclose(v, velocity_fast(random_ensemble, params)[order], rtol=1e-13)


def test_fast_velocity_over_a_wide_span(params):
    ens = ParticleEnsemble(
        [-1e6, -1e6 + 0.3, -1e6 + 0.7, -0.2, 0.4, 1e6 - 0.5, 1e6],
        [0.1, 0.2, 0.1, 0.25, 0.15, 0.1, 0.1],
    )
    fast = velocity_fast(ens, params)
    assert np.all(np.isfinite(fast))
    np.testing.assert_allclose(fast, velocity_naive(ens, params), rtol=1e-11, atol=1e-12)
    assert np.all(np.abs(fast) <= params.alpha * 1.0)


# =============================================================================
# Time stepping
# =============================================================================

def _error_at(step, ens, p, dt, t_end, oracle):
    x = ens
    for _ in range(round(t_end / dt)):
        x = step(x, dt, p)
    return np.max(np.abs(x.positions - oracle))


@pytest.mark.parametrize("step, low, high", [(step_midpoint, 3.5, 4.6), (step_euler, 1.8, 2.3)],
                         ids=["midpoint", "euler"])
def test_integrator_order(step, low, high, random_ensemble, params, oracle_positions):
    exact = oracle_positions(random_ensemble.positions, random_ensemble.weights, params.nu, 1.0)
    coarse = _error_at(step, random_ensemble, params, 0.02, 1.0, exact)
    fine = _error_at(step, random_ensemble, params, 0.01, 1.0, exact)
    assert low <= coarse / fine <= high


def test_midpoint_local_error_is_third_order(random_ensemble, params, oracle_positions):
    def one_step_error(dt):
        exact = oracle_positions(random_ensemble.positions, random_ensemble.weights, params.nu, dt)
        return np.max(np.abs(step_midpoint(random_ensemble, dt, params).positions - exact))

    assert 6.5 <= one_step_error(0.1) / one_step_error(0.05) <= 9.5


def test_step_keeps_weights(random_ensemble, params):
    new = step_midpoint(random_ensemble, 0.1, params)
    np.testing.assert_array_equal(new.weights, random_ensemble.weights)
    assert np.all(np.diff(new.positions) >= 0)


def test_step_detects_nonfinite_velocity(params):
    ens = ParticleEnsemble([-1e308, 1e308], [0.5, 0.5])
    with np.errstate(all="ignore"), pytest.raises(NumericalError):
        step_midpoint(ens, 0.1, params, fast=False)


# =============================================================================
# Configuration
# =============================================================================

def test_simulation_config_validation():
    with pytest.raises(ConfigError):
        SimulationConfig(dt=0.03, t_end=0.1)
    with pytest.raises(ConfigError):
        SimulationConfig(dt=0.0)
    with pytest.raises(ConfigError):
        SimulationConfig(integrator="rk4")
    with pytest.raises(ConfigError):
        SimulationConfig(t_end=1.0, snapshot_times=(0.5, 2.0))
    with pytest.raises(ConfigError):
        SimulationConfig(intervals=((1.0, -1.0),))
    assert SimulationConfig(dt=0.1, t_end=1.0).step_count() == 10
    assert SimulationConfig().replace(t_end=2.0).step_count() == 50


# =============================================================================
# Diagnostics
# =============================================================================

def test_cluster_spans_and_centers():
    ens = ParticleEnsemble([-2.0, -1.9, -1.8, 0.0, 1.0, 1.1], [0.1, 0.1, 0.1, 0.2, 0.25, 0.25])
    assert cluster_spans(ens, 0.25) == [(0, 3), (3, 4), (4, 6)]
    centers = cluster_centers(ens, 0.25)
    assert centers[0] == pytest.approx((-1.9, 0.3))
    assert centers[2] == pytest.approx((1.05, 0.5))


def test_lattice_is_one_gap_cluster_but_two_density_peaks():
    ens = discretize(TWO_BUMP, 200, 0.015)
    assert len(cluster_spans(ens)) == 1
    assert count_density_peaks(ens, 0.1) == 2


def test_diagnostics_fields(two_particles, params):
    d = diagnostics(two_particles, params, intervals=((-2.0, 0.0), (0.5, 1.5)), t=0.3)
    assert d.t == 0.3
    assert d.diameter == 2.0
    assert d.clusters == 2
    assert d.density_peaks == 2
    assert d.interval_masses == (0.5, 0.5)
    assert d.concentration == pytest.approx(0.5 * 0.5 + 2 * 0.25 * math.exp(-4) * 2.5)


# =============================================================================
# Simulation
# =============================================================================

def test_simulate_records_requested_snapshots(random_ensemble, params):
    cfg = SimulationConfig(kernel=params, dt=0.04, t_end=0.4, snapshot_times=(0.0, 0.05, 0.2))
    traj = simulate(random_ensemble, cfg)
    assert traj.steps == 10
    assert traj.times == pytest.approx((0.0, 0.04, 0.2, 0.4))
    assert traj.snapshot_rounding[1] == (0.05, pytest.approx(0.04))
    assert traj.snapshots[0] is random_ensemble
    assert traj.series("t") == pytest.approx(traj.times)
    assert traj.at(0.19)[1].t == pytest.approx(0.2)


def test_simulate_every_step_by_default(two_particles, params):
    traj = simulate(two_particles, SimulationConfig(kernel=params, dt=0.1, t_end=1.0))
    assert len(traj.times) == 11
    assert traj.resort_count == 0


def test_simulate_zero_horizon(random_ensemble, params):
    traj = simulate(random_ensemble, SimulationConfig(kernel=params, t_end=0.0, snapshot_times=(0.0,)))
    assert traj.times == (0.0,)
    assert traj.final is random_ensemble


def test_symmetric_ensemble_stays_symmetric(params):
    ens = discretize(TWO_BUMP, 50, 0.06)
    traj = simulate(ens, SimulationConfig(kernel=params, dt=0.05, t_end=1.0, snapshot_times=()))
    final = traj.final
    np.testing.assert_allclose(final.positions, -final.positions[::-1], atol=1e-12)


def test_simulate_reports_failing_step(monkeypatch, two_particles):
    calls = []

    def flaky(positions, weights, dt, p, fast, summation):
        calls.append(dt)
        return positions * np.nan if len(calls) == 3 else positions

    monkeypatch.setitem(dynamics.INTEGRATORS, "euler", flaky)
    with pytest.raises(NumericalError) as info:
        simulate(two_particles, SimulationConfig(dt=0.1, t_end=1.0, integrator="euler"))
    assert info.value.step == 3
    assert "step 3" in str(info.value)


@pytest.mark.parametrize("fast", [True, False], ids=["fast", "naive"])
def test_paths_agree_on_trajectory(random_ensemble, params, fast):
    cfg = SimulationConfig(kernel=params, dt=0.05, t_end=0.5, snapshot_times=(), fast_path=fast)
    reference = simulate(random_ensemble, cfg.replace(fast_path=True)).final
    np.testing.assert_allclose(simulate(random_ensemble, cfg).final.positions, reference.positions,
                               rtol=0, atol=1e-12)


# =============================================================================
# Consensus proposition
# =============================================================================

def test_proposition_holds(random_ensemble, params):
    traj = simulate(random_ensemble, SimulationConfig(kernel=params, dt=0.05, t_end=2.0))
    report = check_proposition(traj)
    assert report.passed
    assert report.worst_bound_ratio <= 1.0 + 1e-3
    bound = diameter_bound(traj)
    assert bound[0] == pytest.approx(traj.diagnostics[0].diameter)
    assert np.all(np.diff(bound) < 0)


def test_proposition_flags_expansion(two_particles, params):
    traj = simulate(two_particles, SimulationConfig(kernel=params, dt=0.1, t_end=0.2))
    grown = dynamics.TrajectoryRecord(
        times=traj.times,
        snapshots=traj.snapshots,
        diagnostics=tuple(d.__class__(**{**d.__dict__, "max_position": d.max_position + d.t,
                                          "diameter": d.diameter + d.t})
                          for d in traj.diagnostics),
        config=traj.config,
        steps=traj.steps,
    )
    report = check_proposition(grown)
    assert not report.max_nonincreasing
    assert not report.passed


def test_concentration_nondecreasing(random_ensemble, params):
    traj = simulate(random_ensemble, SimulationConfig(kernel=params, dt=0.05, t_end=2.0))
    conc = traj.series("concentration")
    assert np.all(np.diff(conc) >= -1e-10 * np.abs(conc[1:]))


# =============================================================================
# Consensus state
# =============================================================================

@pytest.fixture
def consensus():
    return ParticleEnsemble([0.3, 0.3, 0.3], [0.2, 0.5, 0.3])


def test_consensus_is_a_fixed_point(consensus, params):
    np.testing.assert_array_equal(velocity_fast(consensus, params), 0.0)
    np.testing.assert_array_equal(velocity_naive(consensus, params), 0.0)
    np.testing.assert_array_equal(step_midpoint(consensus, 0.1, params).positions, consensus.positions)


def test_consensus_diagnostics(consensus, params):
    d = diagnostics(consensus, params)
    assert d.diameter == 0.0
    assert d.clusters == 1
    assert d.density_peaks == 1
    assert d.concentration == pytest.approx(params.nu)


def test_consensus_identity_has_both_sides_zero(consensus, params):
    assert identity_rate(consensus, params) == 0.0
    traj = simulate(consensus, SimulationConfig(kernel=params, dt=0.1, t_end=0.5))
    assert np.all(np.diff(traj.series("concentration")) == 0.0)
    report = check_concentration_identity(traj, params)
    assert report.max_relative_mismatch == 0.0
    assert report.passed
