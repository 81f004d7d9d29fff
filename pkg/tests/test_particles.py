import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad, trapezoid
from scipy.stats import norm

from hk_particles.errors import ConfigError
from hk_particles.particles import (
    MIN_CUTOFF,
    THREE_BUMP,
    TWO_BUMP,
    DensitySpec,
    GaussianComponent,
    ParticleEnsemble,
    discretize,
    lattice,
    mollify,
    truncated_mass,
)


# =============================================================================
# DensitySpec
# =============================================================================

def test_density_spec_weights_must_sum_to_one():
    with pytest.raises(ConfigError):
        DensitySpec(((0.5, 0.0, 1.0), (0.4, 1.0, 1.0)))


def test_density_spec_coerces_tuples():
    spec = DensitySpec(((0.25, -1, 0.5), (0.75, 2, 0.1)))
    assert spec.components[0] == GaussianComponent(0.25, -1.0, 0.5)
    assert DensitySpec.from_records(spec.to_records()) == spec


def test_density_spec_from_records_missing_field():
    with pytest.raises(ConfigError, match="variance"):
        DensitySpec.from_records([{"weight": 1.0, "mean": 0.0}])


@pytest.mark.parametrize("spec", [TWO_BUMP, THREE_BUMP], ids=["two_bump", "three_bump"])
def test_pdf_is_a_probability_density(spec):
    total, _ = quad(spec.pdf, -np.inf, np.inf)
    assert total == pytest.approx(1.0, abs=1e-8)
    assert spec.cdf(-50.0) == pytest.approx(0.0, abs=1e-300)
    assert spec.cdf(50.0) == pytest.approx(1.0)


def test_moments_of_presets():
    assert TWO_BUMP.mean() == pytest.approx(0.0, abs=1e-15)
    assert TWO_BUMP.variance() == pytest.approx(1.25)
    assert THREE_BUMP.variance() == pytest.approx(0.1 + 2 / 3)


def test_cell_mass_accurate_in_tails():
    expected, _ = quad(TWO_BUMP.pdf, 6.0, 6.5, epsabs=0, epsrel=1e-12)
    assert float(TWO_BUMP.cell_mass(6.0, 6.5)) == pytest.approx(expected, rel=1e-9)
    expected, _ = quad(TWO_BUMP.pdf, -6.5, -6.0, epsabs=0, epsrel=1e-12)
    assert float(TWO_BUMP.cell_mass(-6.5, -6.0)) == pytest.approx(expected, rel=1e-9)


# =============================================================================
# ParticleEnsemble
# =============================================================================

def test_ensemble_validation():
    with pytest.raises(ConfigError):
        ParticleEnsemble([1.0, 0.0], [0.5, 0.5])
    with pytest.raises(ConfigError):
        ParticleEnsemble([0.0, 1.0], [0.5, 0.0])
    with pytest.raises(ConfigError):
        ParticleEnsemble([], [])
    with pytest.raises(ConfigError):
        ParticleEnsemble([0.0, np.inf], [0.5, 0.5])


def test_ensemble_arrays_are_read_only(two_particles):
    with pytest.raises(ValueError):
        two_particles.positions[0] = 3.0


def test_from_arrays_sorts_merges_and_drops():
    ens = ParticleEnsemble.from_arrays([1.0, 0.0, 1.0, 2.0], [0.2, 0.3, 0.5, 1e-320])
    np.testing.assert_array_equal(ens.positions, [0.0, 1.0])
    np.testing.assert_allclose(ens.weights, [0.3, 0.7])
    with pytest.raises(ConfigError):
        ParticleEnsemble.from_arrays([0.0], [0.0])


def test_ensemble_transforms(random_ensemble):
    total, mu, var = random_ensemble.moments()
    assert total == pytest.approx(1.0)
    assert random_ensemble.shifted(2.0).mean() == pytest.approx(mu + 2.0)
    assert random_ensemble.mirrored().mean() == pytest.approx(-mu)
    assert random_ensemble.mirrored().moments()[2] == pytest.approx(var)
    merged = random_ensemble.merged(random_ensemble.shifted(100.0))
    assert len(merged) == 2 * len(random_ensemble)
    assert merged.total_weight == pytest.approx(2.0)
    assert merged.normalized().total_weight == pytest.approx(1.0)


# =============================================================================
# Construction
# =============================================================================

def test_lattice():
    x = lattice(3, 0.5)
    np.testing.assert_array_equal(x, [-1.0, -0.5, 0.0, 0.5, 1.0])
    with pytest.raises(ConfigError):
        lattice(0, 0.5)
    with pytest.raises(ConfigError):
        lattice(3, -0.5)


@pytest.mark.parametrize("mode", ["midpoint", "exact"])
def test_discretize_two_bump(mode):
    ens = discretize(TWO_BUMP, 200, 0.015, mode)
    assert len(ens) == 399
    assert ens.total_weight == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(ens.positions, lattice(200, 0.015))
    assert ens.mean() == pytest.approx(0.0, abs=1e-12)


def test_exact_and_midpoint_weights_agree_to_second_order():
    mid = discretize(TWO_BUMP, 200, 0.015, "midpoint")
    exact = discretize(TWO_BUMP, 200, 0.015, "exact")
    assert np.max(np.abs(mid.weights - exact.weights)) < 1e-5


@pytest.mark.parametrize("m", [50, 100, 200])
def test_discretization_converges_weakly(m):
    ens = discretize(THREE_BUMP, m, 3 / m)
    total, mu, var = ens.moments()
    assert total == pytest.approx(1.0, abs=1e-14)
    assert mu == pytest.approx(THREE_BUMP.mean(), abs=1e-12)
    assert var == pytest.approx(THREE_BUMP.variance(), abs=1e-7)
    # E cos 2X for the three-camp mixture
    expected = (math.cos(-2.0) + 1.0 + math.cos(2.0)) / 3 * math.exp(-0.2)
    assert float(np.sum(ens.weights * np.cos(2 * ens.positions))) == pytest.approx(expected, abs=1e-7)


@pytest.mark.parametrize("spec", [TWO_BUMP, THREE_BUMP], ids=["two_bump", "three_bump"])
@pytest.mark.parametrize("mode", ["midpoint", "exact"])
def test_weights_are_mirror_symmetric(spec, mode):
    ens = discretize(spec, 100, 0.03, mode)
    np.testing.assert_array_equal(ens.positions, -ens.positions[::-1])
    np.testing.assert_allclose(ens.weights, ens.weights[::-1], rtol=1e-12, atol=0)


def test_exact_and_midpoint_weights_converge_under_refinement():
    gaps = [np.max(np.abs(discretize(THREE_BUMP, m, 3 / m, "midpoint").weights
                          - discretize(THREE_BUMP, m, 3 / m, "exact").weights))
            for m in (50, 100, 200)]
    assert gaps[0] > gaps[1] > gaps[2]
    for coarse, fine in zip(gaps, gaps[1:]):
        assert coarse / fine >= 3.5


def test_discretize_rejects_unknown_mode():
    with pytest.raises(ConfigError):
        discretize(TWO_BUMP, 10, 0.1, "trapezoid")


def test_truncated_mass():
    tm = truncated_mass(TWO_BUMP, 200, 0.015)
    tail = 0.5 * norm.sf(2.9925, loc=1.0, scale=0.5) + 0.5 * norm.cdf(-2.9925, loc=1.0, scale=0.5)
    assert tm == pytest.approx(2 * tail, rel=1e-6)
    assert truncated_mass(THREE_BUMP, 1000, 0.03) == pytest.approx(0.0, abs=1e-15)


# =============================================================================
# Mollification
# =============================================================================

def test_mollify_single_particle_is_gaussian():
    ens = ParticleEnsemble([0.4], [1.0])
    xs = np.linspace(-1, 2, 31)
    np.testing.assert_allclose(mollify(ens, 0.1, xs), norm.pdf(xs, loc=0.4, scale=0.1), rtol=1e-13)
    assert isinstance(mollify(ens, 0.1, 0.4), float)


def test_mollify_preserves_mass(random_ensemble):
    xs = np.linspace(-5, 5, 10001)
    assert trapezoid(mollify(random_ensemble, 0.1, xs), xs) == pytest.approx(1.0, abs=1e-10)


def test_mollify_cutoff():
    ens = discretize(THREE_BUMP, 100, 0.03)
    xs = np.linspace(-3, 3, 601)
    full = mollify(ens, 0.1, xs)
    np.testing.assert_allclose(mollify(ens, 0.1, xs, cutoff=8.5), full, rtol=0, atol=1e-12 * full.max())
    assert math.exp(-MIN_CUTOFF ** 2 / 2) == pytest.approx(1e-14, rel=1e-9)
    for too_small in (4, 8):
        with pytest.raises(ConfigError):
            mollify(ens, 0.1, xs, cutoff=too_small)
    with pytest.raises(ConfigError):
        mollify(ens, 0.0, xs)


@settings(max_examples=40, deadline=None)
@given(
    a=st.lists(st.floats(-3, 3, allow_nan=False), min_size=1, max_size=20),
    b=st.lists(st.floats(-3, 3, allow_nan=False), min_size=1, max_size=20),
)
def test_mollify_is_linear_in_the_measure(a, b):
    ea = ParticleEnsemble.from_arrays(a, np.full(len(a), 0.5))
    eb = ParticleEnsemble.from_arrays(b, np.full(len(b), 0.25))
    xs = np.linspace(-4, 4, 81)
    combined = mollify(ea.merged(eb), 0.2, xs)
    separate = mollify(ea, 0.2, xs) + mollify(eb, 0.2, xs)
    np.testing.assert_allclose(combined, separate, rtol=1e-12, atol=1e-14)
    assert math.isclose(ea.merged(eb).total_weight, ea.total_weight + eb.total_weight)
