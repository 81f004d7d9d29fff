"""Weighted Dirac ensembles: construction from Gaussian-mixture densities and
mollified density reconstruction.

A ``DensitySpec`` describes the initial opinion density f₀ as a Gaussian
mixture. ``discretize`` turns it into a ``ParticleEnsemble`` on the lattice
i·dx, i = −m+1 … m−1, either with midpoint weights f₀(i·dx)·dx (what the
experiments use) or with the exact cell masses of f₀. ``mollify`` convolves
an ensemble with a Gaussian of width σ to get a smooth density back.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from hk_particles.errors import ConfigError
from hk_particles.kernel import weighted_sum

logger = logging.getLogger(__name__)

WEIGHT_FLOOR = 1e-300
DISCRETIZATION_MODES = ("midpoint", "exact")
_BLOCK_ELEMENTS = 1 << 20
# dropped terms stay below 1e-14 of the peak
MIN_CUTOFF = math.sqrt(2 * math.log(1e14))


# =============================================================================
# DENSITY SPECIFICATION
# =============================================================================

@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: float
    variance: float

    def __post_init__(self):
        if not (math.isfinite(self.weight) and self.weight > 0):
            raise ConfigError(f"component weight must be > 0, got {self.weight!r}")
        if not math.isfinite(self.mean):
            raise ConfigError(f"component mean must be finite, got {self.mean!r}")
        if not (math.isfinite(self.variance) and self.variance > 0):
            raise ConfigError(f"component variance must be > 0, got {self.variance!r}")


@dataclass(frozen=True)
class DensitySpec:
    """Gaussian mixture f₀ = Σ_k c_k N(μ_k, s_k²) with Σ c_k = 1."""

    components: tuple

    def __post_init__(self):
        comps = tuple(
            c if isinstance(c, GaussianComponent) else GaussianComponent(*map(float, c))
            for c in self.components
        )
        object.__setattr__(self, "components", comps)
        if not comps:
            raise ConfigError("DensitySpec needs at least one component")
        total = math.fsum(c.weight for c in comps)
        if abs(total - 1.0) > 1e-12:
            raise ConfigError(f"component weights must sum to 1 (got {total!r})")

    @classmethod
    def from_records(cls, records):
        """Build from JSON-style records: dicts with weight/mean/variance or triples."""
        comps = []
        for rec in records:
            if isinstance(rec, dict):
                try:
                    comps.append(GaussianComponent(float(rec["weight"]), float(rec["mean"]),
                                                   float(rec["variance"])))
                except KeyError as exc:
                    raise ConfigError(f"density component is missing field {exc}") from None
            else:
                comps.append(GaussianComponent(*map(float, rec)))
        return cls(tuple(comps))

    def to_records(self):
        return [{"weight": c.weight, "mean": c.mean, "variance": c.variance}
                for c in self.components]

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for c in self.components:
            out = out + c.weight * np.exp(-(x - c.mean) ** 2 / (2 * c.variance)) \
                / math.sqrt(2 * math.pi * c.variance)
        return out

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for c in self.components:
            out = out + c.weight * ndtr((x - c.mean) / math.sqrt(c.variance))
        return out

    def cell_mass(self, lo, hi):
        """∫_lo^hi f₀ dx, accurate in both tails."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        out = np.zeros(np.broadcast(lo, hi).shape)
        for c in self.components:
            s = math.sqrt(c.variance)
            a = (lo - c.mean) / s
            b = (hi - c.mean) / s
            # upper-tail cells via survival functions to avoid 1 − 1 cancellation
            upper = ndtr(-a) - ndtr(-b)
            lower = ndtr(b) - ndtr(a)
            out = out + c.weight * np.where(a > 0, upper, lower)
        return out

    def mean(self):
        return math.fsum(c.weight * c.mean for c in self.components)

    def variance(self):
        mu = self.mean()
        second = math.fsum(c.weight * (c.variance + c.mean ** 2) for c in self.components)
        return second - mu * mu


TWO_BUMP = DensitySpec((GaussianComponent(0.5, -1.0, 0.25), GaussianComponent(0.5, 1.0, 0.25)))
THREE_BUMP = DensitySpec((
    GaussianComponent(1 / 3, -1.0, 0.1),
    GaussianComponent(1 / 3, 0.0, 0.1),
    GaussianComponent(1 / 3, 1.0, 0.1),
))


# =============================================================================
# PARTICLE ENSEMBLE
# =============================================================================

def _frozen(values):
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Sorted opinion positions X_i with positive weights w_i.

    The constructor accepts nondecreasing positions (a time step may bring two
    particles arbitrarily close); ``from_arrays`` is the construction path that
    sorts, merges exact ties and drops underflow weights.
    """

    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        positions = _frozen(self.positions)
        weights = _frozen(self.weights)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "weights", weights)
        if positions.ndim != 1 or positions.shape != weights.shape:
            raise ConfigError("positions and weights must be 1-D arrays of equal length")
        if positions.size == 0:
            raise ConfigError("an ensemble needs at least one particle")
        if not (np.all(np.isfinite(positions)) and np.all(np.isfinite(weights))):
            raise ConfigError("positions and weights must be finite")
        if np.any(weights <= 0):
            raise ConfigError("particle weights must be positive")
        if np.any(np.diff(positions) < 0):
            raise ConfigError("positions must be sorted ascending")

    @classmethod
    def from_arrays(cls, positions, weights):
        positions = np.asarray(positions, dtype=float).ravel()
        weights = np.asarray(weights, dtype=float).ravel()
        if positions.shape != weights.shape:
            raise ConfigError("positions and weights must have equal length")
        keep = weights >= WEIGHT_FLOOR
        positions, weights = positions[keep], weights[keep]
        if positions.size == 0:
            raise ConfigError("no particle carries weight above the underflow floor")
        order = np.argsort(positions, kind="stable")
        positions, weights = positions[order], weights[order]
        unique, start = np.unique(positions, return_index=True)
        if unique.size != positions.size:
            weights = np.add.reduceat(weights, start)
            positions = unique
        return cls(positions, weights)

    def __len__(self):
        return int(self.positions.size)

    @property
    def total_weight(self):
        return float(weighted_sum(self.weights))

    def mean(self):
        return float(weighted_sum(self.weights * self.positions) / self.total_weight)

    def moments(self):
        """(total weight, mean, variance) of the discrete measure."""
        mu = self.mean()
        var = float(weighted_sum(self.weights * (self.positions - mu) ** 2) / self.total_weight)
        return self.total_weight, mu, var

    def with_positions(self, positions):
        return ParticleEnsemble(positions, self.weights)

    def shifted(self, c):
        return ParticleEnsemble(self.positions + c, self.weights)

    def mirrored(self):
        return ParticleEnsemble(-self.positions[::-1], self.weights[::-1])

    def merged(self, other):
        return ParticleEnsemble.from_arrays(
            np.concatenate([self.positions, other.positions]),
            np.concatenate([self.weights, other.weights]),
        )

    def normalized(self):
        return ParticleEnsemble(self.positions, self.weights / self.total_weight)


# =============================================================================
# CONSTRUCTION
# =============================================================================

def lattice(m, dx):
    if int(m) != m or m < 1:
        raise ConfigError(f"m must be a positive integer, got {m!r}")
    if not (math.isfinite(dx) and dx > 0):
        raise ConfigError(f"dx must be > 0, got {dx!r}")
    m = int(m)
    return np.arange(-m + 1, m, dtype=float) * dx


def discretize(spec, m, dx, mode="midpoint"):
    """2m−1 particles at i·dx with weights from f₀, renormalized to sum to 1."""
    if mode not in DISCRETIZATION_MODES:
        raise ConfigError(f"unknown discretization mode {mode!r}; expected {DISCRETIZATION_MODES}")
    positions = lattice(m, dx)
    if mode == "midpoint":
        raw = spec.pdf(positions) * dx
    else:
        raw = spec.cell_mass(positions - dx / 2, positions + dx / 2)
    keep = raw >= WEIGHT_FLOOR
    if not np.any(keep):
        raise ConfigError("discretization produced an empty ensemble")
    positions, raw = positions[keep], raw[keep]
    weights = raw / weighted_sum(raw)
    logger.debug("discretized %d particles (mode=%s, m=%d, dx=%g, truncated mass %.3e)",
                 positions.size, mode, m, dx, truncated_mass(spec, m, dx))
    return ParticleEnsemble(positions, weights)


def truncated_mass(spec, m, dx):
    """Mass of f₀ outside [−(m−½)dx, (m−½)dx), dropped by the renormalization."""
    half_width = (int(m) - 0.5) * dx
    inside = float(spec.cell_mass(-half_width, half_width))
    return max(0.0, 1.0 - inside)


# =============================================================================
# MOLLIFICATION
# =============================================================================

def mollify(ens, sigma, xs, cutoff=None, summation="sequential"):
    """Σ_i w_i exp(−(x−X_i)²/(2σ²)) / √(2πσ²) at each x.

    ``cutoff`` (in units of σ, at least MIN_CUTOFF ≈ 8.03) drops terms beyond
    cutoff·σ; the default is the full sum.
    """
    if not (math.isfinite(sigma) and sigma > 0):
        raise ConfigError(f"sigma must be > 0, got {sigma!r}")
    if cutoff is not None and cutoff < MIN_CUTOFF:
        raise ConfigError(f"a mollifier cutoff below {MIN_CUTOFF:.2f} sigma is not allowed")
    xs_arr = np.asarray(xs, dtype=float)
    flat = np.atleast_1d(xs_arr).ravel()
    if not np.all(np.isfinite(flat)):
        raise ConfigError("mollify evaluation points must be finite")
    positions = ens.positions
    weights = ens.weights
    norm = 1.0 / math.sqrt(2 * math.pi * sigma * sigma)
    out = np.empty(flat.size)
    rows = max(1, _BLOCK_ELEMENTS // positions.size)
    for start in range(0, flat.size, rows):
        u = flat[start:start + rows, None] - positions[None, :]
        terms = weights * np.exp(-(u * u) / (2 * sigma * sigma))
        if cutoff is not None:
            terms = np.where(np.abs(u) <= cutoff * sigma, terms, 0.0)
        out[start:start + rows] = weighted_sum(terms, axis=1, mode=summation)
    out *= norm
    if xs_arr.ndim == 0:
        return float(out[0])
    return out.reshape(xs_arr.shape)
