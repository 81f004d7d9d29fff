"""
Command-line front end.

    python -m hk_particles simulate --preset two_bump --out out/two_bump
    python -m hk_particles converge --study E
    python -m hk_particles verify --preset three_bump

Run parameters resolve as  preset < JSON config file (--config) < flags.
Exit status: 0 success, 2 configuration error, 3 numerical failure,
4 verification failure.
"""

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

from hk_particles import harness, reporting
from hk_particles.config import configure_logging, load_settings
from hk_particles.continuum import (
    Check,
    Grid,
    check_bvp,
    check_concentration_identity,
    check_velocity_consistency,
    field_table_from_ensemble,
)
from hk_particles.dynamics import INTEGRATORS, SimulationConfig, check_proposition, simulate
from hk_particles.errors import ConfigError, HKError, VerificationError
from hk_particles.kernel import KernelParams
from hk_particles.particles import DensitySpec, ParticleEnsemble, discretize, truncated_mass

logger = logging.getLogger(__name__)

DEFAULT_PRESET = "two_bump"
DEFAULT_OUTPUT_WINDOW = (-3.0, 3.0, 0.01)
VERIFY_GRID_DX = 0.05
VERIFY_T_END = 1.0
DIAMETER_BOUND_TOLERANCE = 1e-3

# Keys a flag can set; the config file may additionally carry the last three.
FLAG_KEYS = (
    "preset", "nu", "alpha", "dt", "t_end", "sigma", "m", "dx", "out", "fast_path",
    "deterministic", "exact_weights", "integrator", "snapshot_times", "x_min", "x_max",
    "dx_out", "study", "levels", "grid_dx",
)
CONFIG_KEYS = FLAG_KEYS + ("density", "gap_threshold", "intervals")


# =============================================================================
# RUN CONFIGURATION
# =============================================================================

@dataclass(frozen=True)
class RunConfig:
    preset: str
    density: DensitySpec
    m: int
    dx: float
    simulation: SimulationConfig
    output_dir: str
    x_min: float = DEFAULT_OUTPUT_WINDOW[0]
    x_max: float = DEFAULT_OUTPUT_WINDOW[1]
    dx_out: float = DEFAULT_OUTPUT_WINDOW[2]
    exact_weights: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.x_min) and math.isfinite(self.x_max) and self.x_min < self.x_max):
            raise ConfigError(f"output window needs x_min < x_max, got [{self.x_min}, {self.x_max}]")
        if not (math.isfinite(self.dx_out) and 0 < self.dx_out <= self.x_max - self.x_min):
            raise ConfigError(f"dx_out must lie in (0, x_max - x_min], got {self.dx_out!r}")
        self.output_grid()

    @property
    def deterministic(self):
        return self.simulation.summation == "sequential"

    def output_grid(self):
        width = self.x_max - self.x_min
        n = round(width / self.dx_out)
        if abs(n * self.dx_out - width) > 1e-9 * max(1.0, width):
            raise ConfigError(f"dx_out = {self.dx_out} does not divide [{self.x_min}, {self.x_max}]")
        return Grid(self.x_min, self.x_max, n)

    def ensemble(self):
        return discretize(self.density, self.m, self.dx, "exact" if self.exact_weights else "midpoint")

    def to_dict(self):
        sim = self.simulation
        return {
            "preset": self.preset,
            "density": self.density.to_records(),
            "m": self.m,
            "dx": self.dx,
            "exact_weights": self.exact_weights,
            "nu": sim.kernel.nu,
            "alpha": sim.kernel.alpha,
            "dt": sim.dt,
            "t_end": sim.t_end,
            "snapshot_times": sim.snapshot_times,
            "sigma": sim.sigma,
            "gap_threshold": sim.gap_threshold,
            "intervals": sim.intervals,
            "integrator": sim.integrator,
            "fast_path": sim.fast_path,
            "deterministic": self.deterministic,
            "output_window": {"x_min": self.x_min, "x_max": self.x_max, "dx_out": self.dx_out},
        }


def load_config_file(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = sorted(set(data) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    return data


def merged_values(args):
    values = load_config_file(getattr(args, "config", None))
    for key in FLAG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            values[key] = value
    return values


def resolve_run_config(values, settings):
    try:
        return _resolve(values, settings)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid run configuration: {exc}") from None


def _resolve(values, settings):
    name = values.get("preset", DEFAULT_PRESET)
    base = harness.preset(name, nu=values.get("nu"))
    sim = base.config

    if "m" in values:
        m = int(values["m"])
        dx = float(values.get("dx", harness.HALF_WIDTH / m))
    elif "dx" in values:
        dx = float(values["dx"])
        m = harness.half_width_cells(dx)
    else:
        m, dx = base.m, base.dx

    changes = {"kernel": KernelParams(nu=float(values.get("nu", sim.kernel.nu)),
                                      alpha=float(values.get("alpha", sim.kernel.alpha)))}
    for key in ("dt", "t_end", "sigma", "gap_threshold"):
        if key in values:
            changes[key] = float(values[key])
    if "intervals" in values:
        changes["intervals"] = tuple(tuple(iv) for iv in values["intervals"])
    if "integrator" in values:
        changes["integrator"] = values["integrator"]
    if "fast_path" in values:
        changes["fast_path"] = bool(values["fast_path"])
    changes["summation"] = "sequential" if values.get("deterministic", True) else "pairwise"

    t_end = changes.get("t_end", sim.t_end)
    if "snapshot_times" in values:
        times = values["snapshot_times"]
        changes["snapshot_times"] = None if times is None else tuple(float(t) for t in times)
    elif sim.snapshot_times is not None:
        # a shortened horizon keeps the preset snapshots that still fit
        limit = t_end + 1e-9 * max(1.0, t_end)
        changes["snapshot_times"] = tuple(t for t in sim.snapshot_times if t <= limit)

    density = DensitySpec.from_records(values["density"]) if "density" in values else base.density
    return RunConfig(
        preset=name,
        density=density,
        m=m,
        dx=dx,
        simulation=sim.replace(**changes),
        output_dir=str(values.get("out", settings.output_dir)),
        x_min=float(values.get("x_min", DEFAULT_OUTPUT_WINDOW[0])),
        x_max=float(values.get("x_max", DEFAULT_OUTPUT_WINDOW[1])),
        dx_out=float(values.get("dx_out", DEFAULT_OUTPUT_WINDOW[2])),
        exact_weights=bool(values.get("exact_weights", False)),
    )


def parse_levels(study, levels):
    """Comma list of values (F, G) or dx:dt pairs (E); JSON lists pass through."""
    if levels is None:
        return None
    if isinstance(levels, str):
        items = [s.strip() for s in levels.split(",") if s.strip()]
    else:
        items = list(levels)
    if not items:
        raise ConfigError("empty level list")
    try:
        if study == "E":
            pairs = tuple(tuple(float(v) for v in (it.split(":") if isinstance(it, str) else it))
                          for it in items)
            if any(len(pair) != 2 for pair in pairs):
                raise ConfigError(f"study E levels are dx:dt pairs, got {levels!r}")
            return pairs
        return tuple(float(v) for v in items)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"cannot parse levels {levels!r}") from None


# =============================================================================
# COMMANDS
# =============================================================================

def run_metadata(run, traj, ens0):
    return {
        "config": run.to_dict(),
        "particles": len(ens0),
        "truncated_mass": truncated_mass(run.density, run.m, run.dx),
        "steps": traj.steps,
        "resort_count": traj.resort_count,
        "snapshot_rounding": [{"requested": a, "time": b} for a, b in traj.snapshot_rounding],
        "final": {
            "diameter": traj.diagnostics[-1].diameter,
            "clusters": traj.diagnostics[-1].clusters,
            "density_peaks": traj.diagnostics[-1].density_peaks,
        },
    }


def cmd_simulate(args, settings):
    run = resolve_run_config(merged_values(args), settings)
    grid = run.output_grid()
    ens0 = run.ensemble()
    traj = simulate(ens0, run.simulation)

    out = Path(run.output_dir)
    sim = run.simulation
    paths = [
        reporting.write_csv(reporting.snapshots_frame(traj, grid.nodes, sim.summation),
                            out / "snapshots.csv"),
        reporting.write_csv(reporting.particles_frame(traj), out / "particles.csv"),
        reporting.write_csv(reporting.diagnostics_frame(traj), out / "diagnostics.csv"),
        reporting.write_csv(field_table_from_ensemble(traj.final, sim.kernel, grid, sim.sigma).to_frame(),
                            out / "fields.csv"),
        reporting.write_json(run_metadata(run, traj, ens0), out / "run.json"),
    ]

    reporting.print_banner(f"SIMULATION: {run.preset} ({len(ens0)} particles, nu={sim.kernel.nu:g})")
    print(f"  {'t':>8} {'diameter':>12} {'clusters':>9} {'peaks':>6} {'concentration':>15}")
    print(f"  {'-'*8} {'-'*12} {'-'*9} {'-'*6} {'-'*15}")
    for d in traj.diagnostics:
        if sim.snapshot_times is None and len(traj.diagnostics) > 50 and d.t not in (0.0, sim.t_end):
            continue
        print(f"  {d.t:>8.4g} {d.diameter:>12.6g} {d.clusters:>9} {d.density_peaks:>6} {d.concentration:>15.9g}")
    reporting.print_outputs(paths)
    return 0


def cmd_converge(args, settings):
    values = merged_values(args)
    study = values.get("study")
    if study is None:
        raise ConfigError("converge needs --study (E, F or G)")
    if study not in harness.STUDIES:
        raise ConfigError(f"unknown study {study!r}; expected one of {harness.STUDIES}")
    levels = parse_levels(study, values.get("levels"))
    options = {
        "nu": float(values.get("nu", harness.STUDY_NU)),
        "integrator": values.get("integrator", "midpoint"),
        "fast": bool(values.get("fast_path", True)),
        "summation": "sequential" if values.get("deterministic", True) else "pairwise",
    }
    if study == "F" and "dx" in values:
        options["dx"] = float(values["dx"])
    if study == "G" and "dt" in values:
        options["dt"] = float(values["dt"])
    report = harness.run_study(study, levels, **options)

    out = Path(values.get("out", settings.output_dir))
    paths = [
        reporting.write_csv(report.to_frame(), out / f"report_{study}.csv"),
        reporting.write_json(report.to_dict(), out / f"report_{study}.json"),
    ]
    reporting.print_banner(f"CONVERGENCE STUDY {study} ({options['integrator']})")
    reporting.print_convergence(report)
    reporting.print_outputs(paths)
    return 0


def _proposition_checks(report):
    return [
        Check("min_position_nondecreasing", report.worst_min_drop, 0.0, report.min_nondecreasing),
        Check("max_position_nonincreasing", report.worst_max_rise, 0.0, report.max_nonincreasing),
        Check("diameter_within_bound", report.worst_bound_ratio, 1 + DIAMETER_BOUND_TOLERANCE,
              report.within_diameter_bound),
    ]


def _verify_setup(values, settings):
    if "preset" in values:
        run = resolve_run_config(values, settings)
        return run.preset, run.ensemble(), run.simulation
    p = KernelParams(nu=float(values.get("nu", 0.5)), alpha=float(values.get("alpha", 1.0)))
    ens = ParticleEnsemble([-1.0, 1.0], [0.5, 0.5])
    sim = SimulationConfig(
        kernel=p,
        dt=float(values.get("dt", 0.04)),
        t_end=VERIFY_T_END,
        sigma=float(values.get("sigma", 0.1)),
        integrator=values.get("integrator", "midpoint"),
        fast_path=bool(values.get("fast_path", True)),
        summation="sequential" if values.get("deterministic", True) else "pairwise",
    )
    return "two_particle", ens, sim


def cmd_verify(args, settings):
    values = merged_values(args)
    label, ens, sim = _verify_setup(values, settings)
    sim = sim.replace(t_end=float(values.get("t_end", VERIFY_T_END)), snapshot_times=None)
    p = sim.kernel
    grid = Grid.around(ens, p.nu, float(values.get("grid_dx", VERIFY_GRID_DX)))

    bvp = check_bvp(ens, p, grid, sim.sigma)
    velocity = check_velocity_consistency(ens, p, grid, sim.sigma)
    traj = simulate(ens, sim)
    identity = check_concentration_identity(traj, p)
    checks = bvp.checks() + velocity.checks() + identity.checks() + _proposition_checks(check_proposition(traj))
    failed = [c.name for c in checks if not c.passed]

    out = Path(values.get("out", settings.output_dir))
    payload = {
        "setup": label,
        "particles": len(ens),
        "nu": p.nu,
        "alpha": p.alpha,
        "sigma": sim.sigma,
        "grid": {"x_min": grid.x_min, "x_max": grid.x_max, "spacing": grid.spacing},
        "orders": {**{f"bvp_{k}": v for k, v in bvp.orders.items()}, "velocity_bvp": velocity.bvp_order},
        "velocity_bvp_deviations": velocity.bvp_deviations,
        "checks": [c.to_dict() for c in checks],
        "passed": not failed,
    }
    path = reporting.write_json(payload, out / "verify.json")

    reporting.print_banner(f"VERIFICATION: {label} ({len(ens)} particles, grid spacing {grid.spacing:g})")
    reporting.print_checks(checks)
    reporting.print_outputs([path])
    for name in failed:
        logger.warning("verification check failed: %s", name)
    if failed:
        raise VerificationError(failed)
    return 0


COMMANDS = {"simulate": cmd_simulate, "converge": cmd_converge, "verify": cmd_verify}


# =============================================================================
# ARGUMENT PARSING
# =============================================================================

def _float_list(text):
    try:
        return tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", choices=harness.PRESET_NAMES)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--nu", type=float, help="interaction scale of eta(z) = exp(-z/nu)")
    common.add_argument("--alpha", type=float, help="velocity rate")
    common.add_argument("--dt", type=float, help="time step")
    common.add_argument("--t-end", type=float, help="final time")
    common.add_argument("--sigma", type=float, help="mollifier width")
    common.add_argument("--m", type=int, help="lattice half-size (2m-1 particles)")
    common.add_argument("--dx", type=float, help="lattice spacing")
    common.add_argument("--out", metavar="DIR", help="output directory (default: $HK_OUTPUT_DIR or out)")
    speed = common.add_mutually_exclusive_group()
    speed.add_argument("--fast", dest="fast_path", action="store_true", default=None,
                       help="O(n) velocity evaluation (default)")
    speed.add_argument("--naive", dest="fast_path", action="store_false", default=None,
                       help="O(n^2) velocity evaluation")
    common.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None,
                        help="index-order summation for bit-stable outputs (default: on)")
    common.add_argument("--exact-weights", action="store_true", default=None,
                        help="exact cell masses instead of midpoint weights")
    common.add_argument("--integrator", choices=sorted(INTEGRATORS))

    parser = argparse.ArgumentParser(prog="hk_particles",
                                     description="Continuous opinion dynamics by weighted particles.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", parents=[common], help="run a trajectory and write CSV outputs")
    sim.add_argument("--snapshots", dest="snapshot_times", type=_float_list,
                     help="comma-separated output times")
    sim.add_argument("--x-min", type=float)
    sim.add_argument("--x-max", type=float)
    sim.add_argument("--dx-out", type=float, help="output grid spacing")

    conv = sub.add_parser("converge", parents=[common], help="self-convergence study E, F or G")
    conv.add_argument("--study", choices=harness.STUDIES)
    conv.add_argument("--levels", help="E: dx:dt pairs; F: time steps; G: mesh sizes (comma-separated)")

    ver = sub.add_parser("verify", parents=[common], help="continuum and identity checks")
    ver.add_argument("--grid-dx", type=float, help=f"BVP grid spacing (default {VERIFY_GRID_DX})")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    settings = load_settings()
    configure_logging(settings)
    try:
        return COMMANDS[args.command](args, settings)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except HKError as exc:
        print(f"{parser.prog}: {exc}", file=sys.stderr)
        return exc.exit_code
