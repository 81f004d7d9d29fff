"""Particle dynamics: the conformist velocity law, time stepping and
trajectory diagnostics.

Each particle moves with the η-weighted average of its displacements to all
other particles,

    v_i = α · Σ_j η(|X_i−X_j|) w_j (X_j − X_i) / Σ_ℓ η(|X_i−X_ℓ|) w_ℓ,

evaluated either by the O(n²) double sum (``velocity_naive``) or by the
attenuated scans of the exponential kernel (``velocity_fast``, O(n)).
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from hk_particles import kernel
from hk_particles.errors import ConfigError, NumericalError
from hk_particles.kernel import KernelParams, weighted_sum
from hk_particles.particles import ParticleEnsemble, mollify

logger = logging.getLogger(__name__)

DEFAULT_GAP_THRESHOLD = 0.25
DEFAULT_INTERVALS = ((-0.5, 0.5),)
PEAK_PROMINENCE = 0.01
_BLOCK_ELEMENTS = 1 << 20
_MAX_PEAK_GRID = 20001


# =============================================================================
# CONFIGURATION AND RECORDS
# =============================================================================

@dataclass(frozen=True)
class SimulationConfig:
    kernel: KernelParams = field(default_factory=KernelParams)
    dt: float = 0.04
    t_end: float = 10.0
    # None → every step boundary. 0 and t_end are always recorded.
    snapshot_times: tuple = None
    fast_path: bool = True
    sigma: float = 0.1
    gap_threshold: float = DEFAULT_GAP_THRESHOLD
    intervals: tuple = DEFAULT_INTERVALS
    integrator: str = "midpoint"
    summation: str = "sequential"

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ConfigError(f"dt must be > 0, got {self.dt!r}")
        if not (math.isfinite(self.t_end) and self.t_end >= 0):
            raise ConfigError(f"t_end must be >= 0, got {self.t_end!r}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ConfigError(f"sigma must be > 0, got {self.sigma!r}")
        if not self.gap_threshold > 0:
            raise ConfigError(f"gap_threshold must be > 0, got {self.gap_threshold!r}")
        if self.integrator not in INTEGRATORS:
            raise ConfigError(f"unknown integrator {self.integrator!r}; expected {sorted(INTEGRATORS)}")
        if self.summation not in kernel.SUMMATION_MODES:
            raise ConfigError(f"unknown summation mode {self.summation!r}")
        intervals = tuple((float(a), float(b)) for a, b in self.intervals)
        if any(a > b for a, b in intervals):
            raise ConfigError(f"intervals must have a <= b, got {intervals}")
        object.__setattr__(self, "intervals", intervals)
        if self.snapshot_times is not None:
            times = tuple(float(t) for t in self.snapshot_times)
            slack = 1e-9 * max(1.0, self.t_end)
            if any(t < -slack or t > self.t_end + slack for t in times):
                raise ConfigError(f"snapshot times must lie in [0, {self.t_end}], got {times}")
            if list(times) != sorted(times):
                raise ConfigError("snapshot times must be sorted")
            object.__setattr__(self, "snapshot_times", times)
        self.step_count()

    def step_count(self):
        n = round(self.t_end / self.dt)
        if abs(n * self.dt - self.t_end) > 1e-9 * max(1.0, self.t_end):
            raise ConfigError(f"t_end/dt = {self.t_end}/{self.dt} is not an integer step count")
        return int(n)

    def replace(self, **changes):
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values.update(changes)
        return SimulationConfig(**values)


@dataclass(frozen=True)
class Diagnostics:
    t: float
    min_position: float
    max_position: float
    diameter: float
    concentration: float
    clusters: int
    intervals: tuple
    interval_masses: tuple
    density_peaks: int


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    times: tuple
    snapshots: tuple
    diagnostics: tuple
    config: SimulationConfig
    steps: int
    resort_count: int = 0
    snapshot_rounding: tuple = ()

    def __post_init__(self):
        if not (len(self.times) == len(self.snapshots) == len(self.diagnostics)):
            raise ConfigError("trajectory times, snapshots and diagnostics are misaligned")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ConfigError("trajectory times must be strictly increasing")

    @property
    def final(self):
        return self.snapshots[-1]

    def series(self, name):
        return np.array([getattr(d, name) for d in self.diagnostics], dtype=float)

    def at(self, t):
        """Snapshot recorded closest to time t."""
        idx = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        return self.snapshots[idx], self.diagnostics[idx]


# =============================================================================
# VELOCITY LAW
# =============================================================================

def _naive(positions, weights, p, summation):
    out = np.empty(positions.size)
    rows = max(1, _BLOCK_ELEMENTS // positions.size)
    for start in range(0, positions.size, rows):
        disp = positions[None, :] - positions[start:start + rows, None]
        k = weights * np.exp(-np.abs(disp) / p.nu)
        num = weighted_sum(k * disp, axis=1, mode=summation)
        den = weighted_sum(k, axis=1, mode=summation)
        out[start:start + rows] = num / den
    return p.alpha * out


def _fast(positions, weights, p):
    order = None
    if np.any(np.diff(positions) < 0):
        order = np.argsort(positions, kind="stable")
        positions, weights = positions[order], weights[order]
    left0, left1, right0, right1 = kernel.attenuated_scans(positions, weights, p.nu)
    v = p.alpha * (right1 - left1) / (left0 + right0 - weights)
    if order is None:
        return v
    out = np.empty_like(v)
    out[order] = v
    return out


def _velocities(positions, weights, p, fast, summation):
    v = _fast(positions, weights, p) if fast else _naive(positions, weights, p, summation)
    if not np.all(np.isfinite(v)):
        raise NumericalError("nonfinite velocity")
    return v


def velocity_naive(ens, p, summation="sequential"):
    """O(n²) evaluation of the velocity law."""
    return _naive(np.asarray(ens.positions, float), np.asarray(ens.weights, float), p, summation)


def velocity_fast(ens, p):
    """O(n) evaluation of the velocity law via attenuated scans."""
    return _fast(np.asarray(ens.positions, float), np.asarray(ens.weights, float), p)


# =============================================================================
# TIME STEPPING
# =============================================================================

def _midpoint(positions, weights, dt, p, fast, summation):
    k1 = _velocities(positions, weights, p, fast, summation)
    k2 = _velocities(positions + 0.5 * dt * k1, weights, p, fast, summation)
    return positions + dt * k2


def _euler(positions, weights, dt, p, fast, summation):
    return positions + dt * _velocities(positions, weights, p, fast, summation)


INTEGRATORS = {"midpoint": _midpoint, "euler": _euler}


def _advance(ens, dt, p, integrator="midpoint", fast=True, summation="sequential"):
    """One step; returns (new ensemble, whether the order had to be restored)."""
    positions = _ensure_finite(INTEGRATORS[integrator](
        ens.positions, ens.weights, dt, p, fast, summation))
    weights = ens.weights
    resorted = bool(np.any(np.diff(positions) < 0))
    if resorted:
        order = np.argsort(positions, kind="stable")
        positions, weights = positions[order], weights[order]
    return ParticleEnsemble(positions, weights), resorted


def _ensure_finite(positions):
    if not np.all(np.isfinite(positions)):
        raise NumericalError("nonfinite particle position")
    return positions


def step_midpoint(ens, dt, p, fast=True, summation="sequential"):
    """Explicit midpoint: k₁ = v(X), k₂ = v(X + dt/2·k₁), X′ = X + dt·k₂."""
    new, resorted = _advance(ens, dt, p, "midpoint", fast, summation)
    if resorted:
        logger.warning("particle order restored after midpoint step (dt=%g)", dt)
    return new


def step_euler(ens, dt, p, fast=True, summation="sequential"):
    """Explicit Euler; first order, kept as a convergence negative control."""
    new, resorted = _advance(ens, dt, p, "euler", fast, summation)
    if resorted:
        logger.warning("particle order restored after Euler step (dt=%g)", dt)
    return new


# =============================================================================
# DIAGNOSTICS
# =============================================================================

def cluster_spans(ens, gap_threshold=DEFAULT_GAP_THRESHOLD):
    """Index ranges [start, stop) of maximal runs with consecutive gaps < threshold."""
    breaks = np.flatnonzero(np.diff(ens.positions) >= gap_threshold) + 1
    edges = np.concatenate([[0], breaks, [len(ens)]])
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def cluster_centers(ens, gap_threshold=DEFAULT_GAP_THRESHOLD):
    """Weighted mean position and mass of every gap-based cluster."""
    out = []
    for a, b in cluster_spans(ens, gap_threshold):
        w = ens.weights[a:b]
        mass = float(weighted_sum(w))
        out.append((float(weighted_sum(w * ens.positions[a:b]) / mass), mass))
    return out


def count_density_peaks(ens, sigma, prominence=PEAK_PROMINENCE):
    """Number of modes of the mollified density, ignoring bumps below
    ``prominence`` × the global maximum."""
    lo = ens.positions[0] - 4 * sigma
    hi = ens.positions[-1] + 4 * sigma
    spacing = max(sigma / 10, (hi - lo) / (_MAX_PEAK_GRID - 1))
    xs = np.arange(lo, hi + spacing / 2, spacing)
    dens = mollify(ens, sigma, xs)
    padded = np.concatenate([[0.0], dens, [0.0]])
    peaks, _ = find_peaks(padded, prominence=prominence * float(dens.max()))
    return int(peaks.size)


def diagnostics(ens, p, gap_threshold=DEFAULT_GAP_THRESHOLD, intervals=DEFAULT_INTERVALS,
                t=0.0, sigma=0.1, fast=False, summation="sequential"):
    lo = float(ens.positions[0])
    hi = float(ens.positions[-1])
    intervals = tuple((float(a), float(b)) for a, b in intervals)
    masses = tuple(
        float(weighted_sum(ens.weights[(ens.positions >= a) & (ens.positions <= b)], mode=summation))
        for a, b in intervals
    )
    return Diagnostics(
        t=float(t),
        min_position=lo,
        max_position=hi,
        diameter=hi - lo,
        concentration=kernel.concentration(ens, p, fast=fast, summation=summation),
        clusters=len(cluster_spans(ens, gap_threshold)),
        intervals=intervals,
        interval_masses=masses,
        density_peaks=count_density_peaks(ens, sigma),
    )


def _diagnose(ens, cfg, t):
    return diagnostics(ens, cfg.kernel, cfg.gap_threshold, cfg.intervals, t=t,
                       sigma=cfg.sigma, fast=cfg.fast_path, summation=cfg.summation)


# =============================================================================
# SIMULATION
# =============================================================================

def _snapshot_steps(cfg, n_steps):
    if cfg.snapshot_times is None:
        return set(range(n_steps + 1)), ()
    steps = {0, n_steps}
    rounding = []
    for t in cfg.snapshot_times:
        k = min(n_steps, max(0, round(t / cfg.dt)))
        steps.add(k)
        rounding.append((t, _time_of(k, cfg, n_steps)))
    return steps, tuple(rounding)


def _time_of(k, cfg, n_steps):
    return 0.0 if n_steps == 0 else k * cfg.t_end / n_steps


def simulate(ens0, cfg):
    """Advance ``ens0`` to cfg.t_end, recording diagnostics at snapshot steps."""
    n_steps = cfg.step_count()
    wanted, rounding = _snapshot_steps(cfg, n_steps)
    logger.info("simulating %d particles: %d %s steps of dt=%g (nu=%g, alpha=%g, %s path)",
                len(ens0), n_steps, cfg.integrator, cfg.dt, cfg.kernel.nu, cfg.kernel.alpha,
                "fast" if cfg.fast_path else "naive")

    times, snapshots, diags = [0.0], [ens0], [_diagnose(ens0, cfg, 0.0)]
    ens = ens0
    resorts = 0
    for k in range(1, n_steps + 1):
        try:
            ens, resorted = _advance(ens, cfg.dt, cfg.kernel, cfg.integrator,
                                     cfg.fast_path, cfg.summation)
        except NumericalError as exc:
            raise NumericalError(str(exc), step=k) from exc
        if resorted:
            resorts += 1
            logger.warning("particle order restored at step %d", k)
        if k in wanted:
            t = _time_of(k, cfg, n_steps)
            times.append(t)
            snapshots.append(ens)
            diags.append(_diagnose(ens, cfg, t))

    logger.info("simulation finished at t=%g: diameter %.6g, %d cluster(s), %d re-sort(s)",
                times[-1], diags[-1].diameter, diags[-1].clusters, resorts)
    return TrajectoryRecord(
        times=tuple(times),
        snapshots=tuple(snapshots),
        diagnostics=tuple(diags),
        config=cfg,
        steps=n_steps,
        resort_count=resorts,
        snapshot_rounding=rounding,
    )


# =============================================================================
# CONSENSUS PROPOSITION
# =============================================================================

@dataclass(frozen=True)
class PropositionReport:
    min_nondecreasing: bool
    max_nonincreasing: bool
    within_diameter_bound: bool
    worst_min_drop: float
    worst_max_rise: float
    worst_bound_ratio: float

    @property
    def passed(self):
        return self.min_nondecreasing and self.max_nonincreasing and self.within_diameter_bound


def diameter_bound(traj):
    """diameter(0)·exp(−α(w_first + w_last)·η(diameter(0))·t / W) at every snapshot time.

    W is the total weight. The extreme particles gain at least
    α·w_other·η(D)·D / W per unit time because η ≤ 1 bounds the normaliser by W,
    and η(D(t)) ≥ η(D(0)) while the diameter shrinks.
    """
    first = traj.snapshots[0]
    p = traj.config.kernel
    d0 = traj.diagnostics[0].diameter
    rate = p.alpha * float(first.weights[0] + first.weights[-1]) * math.exp(-d0 / p.nu) / first.total_weight
    return traj.diagnostics[0].diameter * np.exp(-rate * np.asarray(traj.times))


def check_proposition(traj, tol=1e-3, slack=10.0):
    """Monotone extremes (slack·eps·diameter per step) and the diameter envelope."""
    lows = traj.series("min_position")
    highs = traj.series("max_position")
    diam = traj.series("diameter")
    eps = np.finfo(float).eps
    steps_between = np.maximum(1, np.round(np.diff(traj.times) / traj.config.dt))
    allowance = slack * eps * diam[:-1] * steps_between
    min_drop = np.max(np.concatenate([[0.0], (lows[:-1] - lows[1:]) - allowance]))
    max_rise = np.max(np.concatenate([[0.0], (highs[1:] - highs[:-1]) - allowance]))
    bound = diameter_bound(traj)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(bound > 0, diam / bound, np.where(diam > 0, np.inf, 1.0))
    worst_ratio = float(np.max(ratios))
    return PropositionReport(
        min_nondecreasing=bool(min_drop <= 0),
        max_nonincreasing=bool(max_rise <= 0),
        within_diameter_bound=bool(worst_ratio <= 1 + tol),
        worst_min_drop=float(min_drop),
        worst_max_rise=float(max_rise),
        worst_bound_ratio=worst_ratio,
    )
