"""Experiment presets and the self-convergence studies.

Three studies measure weak (mollified) self-convergence of the particle
method for the three-bump initial density, all at t = 1 with σ = 0.1:

    E: dx and dt halved together, each level against its own halving
    F: dt varied at the finest dx, against the finest (dx, dt) run
    G: dx varied at the finest dt, against the same reference

Errors are maxima over the strict comparison grid x = j·dx, −3 < x < 3, and
successive ratios error(coarse)/error(next finer) should sit near 4.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import pandas as pd

from hk_particles.dynamics import SimulationConfig, simulate
from hk_particles.errors import ConfigError
from hk_particles.kernel import KernelParams
from hk_particles.particles import THREE_BUMP, TWO_BUMP, discretize, mollify

logger = logging.getLogger(__name__)

PRESET_NAMES = ("two_bump", "three_bump", "convergence_base")
STUDIES = ("E", "F", "G")

HALF_WIDTH = 3.0
STUDY_T_END = 1.0
STUDY_SIGMA = 0.1
STUDY_NU = 0.2

DEFAULT_E_LEVELS = ((0.06, 0.1), (0.03, 0.05), (0.015, 0.025), (0.0075, 0.0125))
DEFAULT_F_DTS = (0.1, 0.05, 0.025, 0.0125)
DEFAULT_G_DXS = (0.06, 0.03, 0.015, 0.0075)
REFERENCE_DX = 0.00375
REFERENCE_DT = 0.00625


# =============================================================================
# PRESETS
# =============================================================================

@dataclass(frozen=True)
class Preset:
    name: str
    density: object
    m: int
    dx: float
    config: SimulationConfig
    mode: str = "midpoint"

    def ensemble(self):
        return discretize(self.density, self.m, self.dx, self.mode)


def _integral(value, what):
    n = round(value)
    if n < 1 or abs(n - value) > 1e-9 * max(1.0, abs(value)):
        raise ConfigError(f"{what} = {value!r} must be a positive integer")
    return int(n)


def half_width_cells(dx):
    """m with m·dx = 3, the lattice half-width of every preset."""
    return _integral(HALF_WIDTH / dx, "3/dx")


def preset(name, dx=None, dt=None, nu=None):
    """Named experiment: (density, lattice, simulation config).

    two_bump and three_bump reproduce the figure runs; convergence_base is the
    t = 1 setup of the studies with X_j(0) = −3 + j·dx, j = 1 … 6/dx − 1.
    """
    if name == "two_bump":
        dx = 3 / 200 if dx is None else dx
        cfg = SimulationConfig(
            kernel=KernelParams(nu=0.5 if nu is None else nu),
            dt=0.04 if dt is None else dt,
            t_end=10.0,
            snapshot_times=(0.0, 5.0, 10.0),
            sigma=0.1,
        )
    elif name == "three_bump":
        dx = 3 / 100 if dx is None else dx
        # ν = 0.2: three camps through t = 10, one by t = 30
        cfg = SimulationConfig(
            kernel=KernelParams(nu=STUDY_NU if nu is None else nu),
            dt=0.1 if dt is None else dt,
            t_end=40.0,
            snapshot_times=tuple(float(t) for t in range(0, 41)),
            sigma=0.1,
        )
    elif name == "convergence_base":
        dx = 0.06 if dx is None else dx
        dt = 0.1 if dt is None else dt
        _integral(1 / dt, "1/dt")
        cfg = SimulationConfig(
            kernel=KernelParams(nu=STUDY_NU if nu is None else nu),
            dt=dt,
            t_end=STUDY_T_END,
            snapshot_times=(0.0, STUDY_T_END),
            sigma=STUDY_SIGMA,
        )
    else:
        raise ConfigError(f"unknown preset {name!r}; expected one of {PRESET_NAMES}")
    density = TWO_BUMP if name == "two_bump" else THREE_BUMP
    m = half_width_cells(dx)
    return Preset(name=name, density=density, m=m, dx=float(dx), config=cfg)


# =============================================================================
# RUNS
# =============================================================================

@lru_cache(maxsize=64)
def run_to(dx, dt, t_end=STUDY_T_END, nu=STUDY_NU, integrator="midpoint", fast=True,
           summation="sequential"):
    """Final ensemble of the convergence_base setup; cached so that a run shared
    by two comparisons (fine at one level, coarse at the next) is done once."""
    base = preset("convergence_base", dx=dx, dt=dt, nu=nu)
    cfg = base.config.replace(t_end=t_end, snapshot_times=(), integrator=integrator,
                              fast_path=fast, summation=summation)
    logger.info("convergence run dx=%g dt=%g (%d particles, %d steps, %s)",
                dx, dt, 2 * base.m - 1, cfg.step_count(), integrator)
    return simulate(base.ensemble(), cfg).final


def comparison_grid(dx):
    """x = j·dx with −3 < x < 3 (endpoints excluded)."""
    j = half_width_cells(dx) - 1
    return np.arange(-j, j + 1, dtype=float) * dx


def _mollified(dx, dt, xs, options):
    return mollify(run_to(dx, dt, **options), STUDY_SIGMA, xs)


# =============================================================================
# REPORTS
# =============================================================================

@dataclass(frozen=True)
class ConvergenceRow:
    dx: float
    dt: float
    error: float
    ratio: float = None


@dataclass(frozen=True)
class ConvergenceReport:
    study: str
    rows: tuple
    metadata: dict = field(default_factory=dict)

    @property
    def errors(self):
        return [r.error for r in self.rows]

    @property
    def ratios(self):
        return [r.ratio for r in self.rows if r.ratio is not None]

    def to_frame(self):
        return pd.DataFrame(
            [{"dx": r.dx, "dt": r.dt, "error": r.error,
              "ratio": np.nan if r.ratio is None else r.ratio} for r in self.rows],
            columns=["dx", "dt", "error", "ratio"],
        )

    def to_dict(self):
        return {
            "study": self.study,
            "rows": [{"dx": r.dx, "dt": r.dt, "error": r.error, "ratio": r.ratio} for r in self.rows],
            "metadata": self.metadata,
        }


def _with_ratios(study, entries, metadata):
    rows = []
    for k, (dx, dt, err) in enumerate(entries):
        ratio = None
        if k + 1 < len(entries) and entries[k + 1][2] > 0:
            ratio = err / entries[k + 1][2]
        rows.append(ConvergenceRow(dx=dx, dt=dt, error=err, ratio=ratio))
    report = ConvergenceReport(study=study, rows=tuple(rows), metadata=metadata)
    logger.info("study %s ratios: %s", study, ["%.3f" % r for r in report.ratios])
    return report


def _metadata(grid_rule, nu, options):
    return {
        "preset": "convergence_base",
        "nu": nu,
        "sigma": STUDY_SIGMA,
        "t_end": STUDY_T_END,
        "comparison_grid": grid_rule,
        "integrator": options["integrator"],
    }


def _options(nu, integrator, fast, summation):
    return {"nu": nu, "integrator": integrator, "fast": fast, "summation": summation}


def _check_nonempty(values, what):
    values = tuple(values)
    if not values:
        raise ConfigError(f"{what} is empty")
    return values


# =============================================================================
# STUDIES
# =============================================================================

def study_E(levels=DEFAULT_E_LEVELS, nu=STUDY_NU, integrator="midpoint", fast=True,
            summation="sequential"):
    """E_{dx,dt} = max |f_{dx/2,dt/2}(x,1) − f_{dx,dt}(x,1)| over x = j·dx."""
    levels = tuple((float(dx), float(dt)) for dx, dt in _check_nonempty(levels, "level list"))
    for (dx0, dt0), (dx1, dt1) in zip(levels, levels[1:]):
        if not (math.isclose(dx1, dx0 / 2, rel_tol=1e-9) and math.isclose(dt1, dt0 / 2, rel_tol=1e-9)):
            raise ConfigError(f"level ({dx1}, {dt1}) does not halve ({dx0}, {dt0})")
    options = _options(nu, integrator, fast, summation)
    entries = []
    for dx, dt in levels:
        _integral(6 / dx, "6/dx")
        _integral(1 / dt, "1/dt")
        xs = comparison_grid(dx)
        err = np.max(np.abs(_mollified(dx / 2, dt / 2, xs, options) - _mollified(dx, dt, xs, options)))
        entries.append((dx, dt, float(err)))
    return _with_ratios("E", entries, _metadata("x = j*dx, -3 < x < 3", nu, options))


def study_F(dts=DEFAULT_F_DTS, dx=REFERENCE_DX, dt_ref=REFERENCE_DT, nu=STUDY_NU,
            integrator="midpoint", fast=True, summation="sequential"):
    """F_{dt} = max |f_{dx,dt_ref}(x,1) − f_{dx,dt}(x,1)| over x = dx·j at fixed dx."""
    dts = tuple(float(dt) for dt in _check_nonempty(dts, "time-step list"))
    for dt in dts:
        _integral(1 / dt, "1/dt")
        if dt < dt_ref:
            raise ConfigError(f"dt = {dt} is finer than the reference {dt_ref}")
    options = _options(nu, integrator, fast, summation)
    xs = comparison_grid(dx)
    reference = _mollified(dx, dt_ref, xs, options)
    entries = [(dx, dt, float(np.max(np.abs(reference - _mollified(dx, dt, xs, options)))))
               for dt in dts]
    meta = _metadata(f"x = {dx}*j, -3 < x < 3", nu, options)
    meta.update(reference_dx=dx, reference_dt=dt_ref)
    return _with_ratios("F", entries, meta)


def study_G(dxs=DEFAULT_G_DXS, dt=REFERENCE_DT, dx_ref=REFERENCE_DX, nu=STUDY_NU,
            integrator="midpoint", fast=True, summation="sequential"):
    """G_{dx} = max |f_{dx_ref,dt}(x,1) − f_{dx,dt}(x,1)| over x = j·dx of the coarse run."""
    dxs = tuple(float(dx) for dx in _check_nonempty(dxs, "mesh-size list"))
    _integral(1 / dt, "1/dt")
    for dx in dxs:
        _integral(6 / dx, "6/dx")
        if dx < dx_ref:
            raise ConfigError(f"dx = {dx} is finer than the reference {dx_ref}")
    options = _options(nu, integrator, fast, summation)
    entries = []
    for dx in dxs:
        xs = comparison_grid(dx)
        err = np.max(np.abs(_mollified(dx_ref, dt, xs, options) - _mollified(dx, dt, xs, options)))
        entries.append((dx, dt, float(err)))
    meta = _metadata("x = j*dx, -3 < x < 3", nu, options)
    meta.update(reference_dx=dx_ref, reference_dt=dt)
    return _with_ratios("G", entries, meta)


def run_study(study, values=None, **options):
    if study == "E":
        return study_E(DEFAULT_E_LEVELS if values is None else values, **options)
    if study == "F":
        return study_F(DEFAULT_F_DTS if values is None else values, **options)
    if study == "G":
        return study_G(DEFAULT_G_DXS if values is None else values, **options)
    raise ConfigError(f"unknown study {study!r}; expected one of {STUDIES}")
