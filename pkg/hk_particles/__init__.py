"""Fully continuous bounded-confidence opinion dynamics by a weighted particle method."""

from hk_particles.dynamics import SimulationConfig, TrajectoryRecord, simulate
from hk_particles.errors import ConfigError, HKError, NumericalError, VerificationError
from hk_particles.kernel import KernelParams
from hk_particles.particles import THREE_BUMP, TWO_BUMP, DensitySpec, ParticleEnsemble, discretize, mollify

__all__ = [
    "ConfigError",
    "DensitySpec",
    "HKError",
    "KernelParams",
    "NumericalError",
    "ParticleEnsemble",
    "SimulationConfig",
    "THREE_BUMP",
    "TWO_BUMP",
    "TrajectoryRecord",
    "VerificationError",
    "discretize",
    "mollify",
    "simulate",
]
