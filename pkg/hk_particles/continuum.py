"""Grid verification of the differential formulation.

For the exponential kernel the fields of the particle law satisfy three
screened-Poisson equations on the whole line,

    −g_xx + g/ν² =  (2/ν) f
    −h_xx + h/ν² = −2 g_x
    −H_xx + H/ν² = −2 g

This module solves them on a truncated uniform grid (homogeneous Dirichlet
ends, second-order central differences, one tridiagonal solve each) and checks
the solutions against the closed forms in ``kernel``, against the particle
velocities, and against the concentration identity along a trajectory.
Nothing here advances the density in time.
"""

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from numba import njit
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline

from hk_particles import kernel
from hk_particles.dynamics import velocity_naive
from hk_particles.errors import ConfigError
from hk_particles.particles import mollify

logger = logging.getLogger(__name__)

RESIDUAL_TOLERANCE = 1e-10
ORDER_THRESHOLD = 1.9
MASS_TOLERANCE = 1e-6
SIGN_SLACK = 1e-12
TRUNCATION_TOLERANCE = 1e-8
CLOSED_FORM_TOLERANCE = 1e-12
REFERENCE_REFINEMENT = 8


# =============================================================================
# GRID AND FIELD TABLE
# =============================================================================

@dataclass(frozen=True)
class Grid:
    x_min: float
    x_max: float
    n_cells: int

    def __post_init__(self):
        if not (math.isfinite(self.x_min) and math.isfinite(self.x_max) and self.x_min < self.x_max):
            raise ConfigError(f"grid needs x_min < x_max, got [{self.x_min}, {self.x_max}]")
        if int(self.n_cells) != self.n_cells or self.n_cells < 4:
            raise ConfigError(f"grid needs at least 4 cells, got {self.n_cells!r}")
        object.__setattr__(self, "n_cells", int(self.n_cells))

    @classmethod
    def around(cls, ens, nu, spacing, margin=24.0):
        """Grid of the given spacing reaching ``margin``·ν beyond all particles.

        H decays like (νu + ν²)e^{−u/ν}; at 24ν that is below 1e-9 for ν ≤ 1.
        """
        lo = float(ens.positions[0]) - margin * nu
        hi = float(ens.positions[-1]) + margin * nu
        n = max(4, math.ceil((hi - lo) / spacing - 1e-9))
        return cls(lo, lo + n * spacing, n)

    @property
    def spacing(self):
        return (self.x_max - self.x_min) / self.n_cells

    @property
    def nodes(self):
        return self.x_min + np.arange(self.n_cells + 1) * self.spacing

    def refined(self, factor=2):
        return Grid(self.x_min, self.x_max, self.n_cells * factor)

    def padded(self, cells):
        """Same spacing, ``cells`` extra cells on each side."""
        d = self.spacing
        return Grid(self.x_min - cells * d, self.x_max + cells * d, self.n_cells + 2 * cells)


@dataclass(frozen=True, eq=False)
class FieldTable:
    grid: Grid
    f: np.ndarray = None
    g: np.ndarray = None
    h: np.ndarray = None
    H: np.ndarray = None

    def __post_init__(self):
        n = self.grid.n_cells + 1
        for name in ("f", "g", "h", "H"):
            values = getattr(self, name)
            if values is None:
                continue
            arr = np.asarray(values, dtype=float)
            if arr.shape != (n,):
                raise ConfigError(f"field {name} has shape {arr.shape}, expected ({n},)")
            object.__setattr__(self, name, arr)

    def require(self, name):
        values = getattr(self, name)
        if values is None:
            raise ConfigError(f"field table has no {name!r} column")
        return values

    def to_frame(self):
        columns = {"x": self.grid.nodes}
        for name in ("f", "g", "h", "H"):
            if getattr(self, name) is not None:
                columns[name] = getattr(self, name)
        return pd.DataFrame(columns)


# =============================================================================
# TRIDIAGONAL SOLVE
# =============================================================================

@njit(cache=True)
def _thomas(lower, diag, upper, rhs):
    n = rhs.size
    c = np.empty(n)
    d = np.empty(n)
    c[0] = upper[0] / diag[0]
    d[0] = rhs[0] / diag[0]
    for k in range(1, n):
        m = diag[k] - lower[k] * c[k - 1]
        c[k] = upper[k] / m
        d[k] = (rhs[k] - lower[k] * d[k - 1]) / m
    x = np.empty(n)
    x[n - 1] = d[n - 1]
    for k in range(n - 2, -1, -1):
        x[k] = d[k] - c[k] * x[k + 1]
    return x


def _operator(grid, nu):
    """Bands of −D₂ + I/ν² on the interior nodes (lower[0], upper[-1] unused)."""
    n = grid.n_cells - 1
    inv = 1.0 / grid.spacing ** 2
    off = np.full(n, -inv)
    diag = np.full(n, 2.0 * inv + 1.0 / nu ** 2)
    return off, diag, off.copy()


def solve_screened(rhs, grid, nu):
    """Solve −u_xx + u/ν² = rhs with u = 0 at both grid ends."""
    rhs = np.asarray(rhs, dtype=float)
    lower, diag, upper = _operator(grid, nu)
    u = np.zeros(grid.n_cells + 1)
    u[1:-1] = _thomas(lower, diag, upper, np.ascontiguousarray(rhs[1:-1]))
    return u


def tridiagonal_residual(u, rhs, grid, nu):
    """‖A u − b‖_∞ / ‖b‖_∞ on the interior (0 when b vanishes and u does too)."""
    u = np.asarray(u, dtype=float)
    b = np.asarray(rhs, dtype=float)[1:-1]
    inv = 1.0 / grid.spacing ** 2
    au = (-u[:-2] + 2 * u[1:-1] - u[2:]) * inv + u[1:-1] / nu ** 2
    scale = np.max(np.abs(b))
    err = np.max(np.abs(au - b))
    if scale == 0:
        return float(err)
    return float(err / scale)


def solve_bvp_g(table, p):
    f = table.require("f")
    return replace(table, g=solve_screened((2.0 / p.nu) * f, table.grid, p.nu))


def solve_bvp_h(table, p):
    g = table.require("g")
    g_x = np.gradient(g, table.grid.spacing, edge_order=2)
    return replace(table, h=solve_screened(-2.0 * g_x, table.grid, p.nu))


def solve_bvp_H(table, p):
    g = table.require("g")
    return replace(table, H=solve_screened(-2.0 * g, table.grid, p.nu))


def bvp_fields(ens, p, grid, sigma):
    """Mollified f on the grid and the solved g, h, H."""
    table = FieldTable(grid, f=mollify(ens, sigma, grid.nodes))
    table = solve_bvp_g(table, p)
    table = solve_bvp_h(table, p)
    return solve_bvp_H(table, p)


def field_table_from_ensemble(ens, p, grid, sigma):
    """Mollified f with the closed-form g, h, H of the Dirac measure."""
    x = grid.nodes
    return FieldTable(
        grid,
        f=mollify(ens, sigma, x),
        g=kernel.field_g(ens, x, p),
        h=kernel.field_h(ens, x, p),
        H=kernel.field_H(ens, x, p),
    )


# =============================================================================
# CONVERGENCE ORDER
# =============================================================================

def observed_order(error_coarse, error_fine, factor=2.0, floor=0.0):
    """log_factor(error_coarse / error_fine); inf when both errors sit below ``floor``."""
    if error_coarse <= floor and error_fine <= floor:
        return math.inf
    if error_fine <= 0:
        return math.inf
    if error_coarse <= 0:
        return -math.inf
    return math.log(error_coarse / error_fine) / math.log(factor)


def _on_coarse(values, grid, coarse):
    stride = grid.n_cells // coarse.n_cells
    return values[::stride]


# =============================================================================
# REPORTS
# =============================================================================

@dataclass(frozen=True)
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    relation: str = "<="

    def to_dict(self):
        return {"name": self.name, "value": _jsonable(self.value),
                "threshold": self.threshold, "relation": self.relation, "passed": self.passed}


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def _at_most(name, value, threshold):
    return Check(name, float(value), threshold, bool(value <= threshold), "<=")


def _at_least(name, value, threshold):
    return Check(name, float(value), threshold, bool(value >= threshold), ">=")


@dataclass(frozen=True)
class BvpReport:
    spacing: float
    residuals: dict
    orders: dict
    mass_g_error: float
    mass_h_error: float
    H_max: float
    H_derivative_error: float
    H_derivative_tolerance: float
    truncation_change: float

    def checks(self):
        out = [_at_most(f"bvp_residual_{k}", v, RESIDUAL_TOLERANCE) for k, v in self.residuals.items()]
        out += [_at_least(f"bvp_order_{k}", v, ORDER_THRESHOLD) for k, v in self.orders.items()]
        out += [
            _at_most("integral_g_minus_2nu_mass", self.mass_g_error, MASS_TOLERANCE),
            _at_most("integral_h", self.mass_h_error, MASS_TOLERANCE),
            _at_most("H_nonpositive_max", self.H_max, SIGN_SLACK),
            _at_most("H_x_minus_h", self.H_derivative_error, self.H_derivative_tolerance),
            _at_most("domain_doubling_change", self.truncation_change, TRUNCATION_TOLERANCE),
        ]
        return out


def check_bvp(ens, p, grid, sigma):
    """Residuals, self-convergence orders and conservation checks for the three solves.

    Orders compare the grid and its first refinement against a reference
    refined eight times, on the coarse nodes.
    """
    levels = [grid, grid.refined(2), grid.refined(REFERENCE_REFINEMENT)]
    tables = [bvp_fields(ens, p, lv, sigma) for lv in levels]
    base = tables[0]

    residuals = {
        "g": tridiagonal_residual(base.g, (2.0 / p.nu) * base.f, grid, p.nu),
        "h": tridiagonal_residual(base.h, -2.0 * np.gradient(base.g, grid.spacing, edge_order=2),
                                  grid, p.nu),
        "H": tridiagonal_residual(base.H, -2.0 * base.g, grid, p.nu),
    }
    orders = {}
    for name in ("g", "h", "H"):
        ref = _on_coarse(tables[2].require(name), levels[2], grid)
        e0 = np.max(np.abs(base.require(name) - ref))
        e1 = np.max(np.abs(_on_coarse(tables[1].require(name), levels[1], grid) - ref))
        floor = 1e-13 * max(1.0, float(np.max(np.abs(ref))))
        orders[name] = observed_order(e0, e1, floor=floor)

    d = grid.spacing
    mass_f = trapezoid(base.f, dx=d)
    mass_g_error = abs(trapezoid(base.g, dx=d) - 2 * p.nu * mass_f)
    mass_h_error = abs(trapezoid(base.h, dx=d))
    dH = np.gradient(base.H, d, edge_order=2)
    h_scale = float(np.max(np.abs(base.h)))
    deriv_err = float(np.max(np.abs(dH - base.h)))

    pad = grid.n_cells // 2
    wide = bvp_fields(ens, p, grid.padded(pad), sigma)
    trunc = max(float(np.max(np.abs(wide.require(k)[pad:pad + grid.n_cells + 1] - base.require(k))))
                for k in ("g", "h", "H"))

    report = BvpReport(
        spacing=d,
        residuals=residuals,
        orders=orders,
        mass_g_error=float(mass_g_error),
        mass_h_error=float(mass_h_error),
        H_max=float(np.max(base.H)),
        H_derivative_error=deriv_err,
        H_derivative_tolerance=max(d * d, 1e-12) * max(h_scale, 1e-300) / p.nu ** 2,
        truncation_change=trunc,
    )
    logger.info("BVP check at spacing %g: orders %s", d,
                {k: round(v, 3) for k, v in orders.items()})
    return report


@dataclass(frozen=True)
class VelocityConsistencyReport:
    closed_form_deviation: float
    bvp_deviations: tuple
    bvp_order: float

    def checks(self):
        return [
            _at_most("velocity_closed_form", self.closed_form_deviation, CLOSED_FORM_TOLERANCE),
            _at_least("velocity_bvp_order", self.bvp_order, ORDER_THRESHOLD),
        ]

    @property
    def passed(self):
        return all(c.passed for c in self.checks())


def _bvp_velocity(ens, p, grid, sigma):
    table = bvp_fields(ens, p, grid, sigma)
    x = grid.nodes
    g = CubicSpline(x, table.g)(ens.positions)
    h = CubicSpline(x, table.h)(ens.positions)
    return -p.alpha * h / g


def check_velocity_consistency(ens, p, grid, sigma):
    """Compare −α h/g at the particles with the particle velocity law.

    (a) closed-form g, h: relative deviation, exact up to rounding.
    (b) BVP-solved g, h from the mollified density on ``grid``: deviation per
        level (it carries an O(σ²) mollification bias) and the self-convergence
        order of (b) under grid halving against an eight-times refined reference.
    """
    v_ref = velocity_naive(ens, p)
    scale = max(float(np.max(np.abs(v_ref))), 1e-300)

    v_a = -p.alpha * kernel.field_h(ens, ens.positions, p) / kernel.field_g(ens, ens.positions, p)
    dev_a = float(np.max(np.abs(v_a - v_ref))) / scale

    levels = [grid, grid.refined(2), grid.refined(REFERENCE_REFINEMENT)]
    v_b = [_bvp_velocity(ens, p, lv, sigma) for lv in levels]
    devs = tuple(float(np.max(np.abs(v - v_ref))) for v in v_b[:2])
    e0 = float(np.max(np.abs(v_b[0] - v_b[2])))
    e1 = float(np.max(np.abs(v_b[1] - v_b[2])))
    floor = 1e-12 * p.alpha * (p.nu + float(ens.positions[-1] - ens.positions[0]))
    report = VelocityConsistencyReport(dev_a, devs, observed_order(e0, e1, floor=floor))
    logger.info("velocity consistency: closed form %.3e, BVP order %.3f",
                report.closed_form_deviation, report.bvp_order)
    return report


@dataclass(frozen=True)
class ConcentrationIdentityReport:
    max_relative_mismatch: float
    mismatch_tolerance: float
    nondecreasing: bool
    worst_decrease: float
    interior_points: int

    def checks(self):
        return [
            _at_most("concentration_identity", self.max_relative_mismatch, self.mismatch_tolerance),
            Check("concentration_nondecreasing", self.worst_decrease, 0.0, self.nondecreasing, "<="),
        ]

    @property
    def passed(self):
        return all(c.passed for c in self.checks())


def identity_rate(ens, p):
    """(2α/ν) Σ_i w_i h(X_i)² / g(X_i): the rate of change of ‖g‖² along the flow."""
    h = kernel.field_h(ens, ens.positions, p)
    g = kernel.field_g(ens, ens.positions, p)
    return float(2.0 * p.alpha / p.nu * kernel.weighted_sum(ens.weights * h * h / g))


def check_concentration_identity(traj, p, relative_slack=1e-10, tolerance=None):
    """Centered differences of ‖g‖² against the identity rate at interior snapshots.

    The default mismatch tolerance is 10·Δ² for snapshot spacing Δ.
    """
    times = np.asarray(traj.times)
    conc = traj.series("concentration")
    if times.size >= 2:
        spacing = np.diff(times)
        if np.max(np.abs(spacing - spacing[0])) > 1e-9 * max(1.0, times[-1]):
            raise ConfigError("concentration identity check needs uniformly spaced snapshots")
        delta = float(spacing[0])
    else:
        delta = 0.0

    mismatch = 0.0
    if times.size >= 3:
        lhs = (conc[2:] - conc[:-2]) / (2 * delta)
        rhs = np.array([identity_rate(ens, p) for ens in traj.snapshots[1:-1]])
        scale = max(float(np.max(np.abs(rhs))), 1e-300)
        mismatch = float(np.max(np.abs(lhs - rhs))) / scale

    decreases = conc[:-1] - conc[1:] - relative_slack * np.abs(conc[1:])
    worst = float(np.max(decreases)) if decreases.size else 0.0
    tol = 10.0 * delta * delta if tolerance is None else tolerance
    return ConcentrationIdentityReport(
        max_relative_mismatch=mismatch,
        mismatch_tolerance=tol,
        nondecreasing=bool(worst <= 0),
        worst_decrease=worst,
        interior_points=max(0, times.size - 2),
    )
