"""
Output files and console reports.

CSV files are written through pandas with a fixed column order, 17
significant digits and '\\n' line endings so that two runs of the same
configuration produce byte-identical files. JSON files are sorted and
indented. Console tables follow the banner + aligned-column layout used for
reconciliation reports.
"""

import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from hk_particles.particles import mollify

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
BANNER_WIDTH = 60


# =============================================================================
# WRITERS
# =============================================================================

def write_csv(df, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        df.to_csv(fh, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.debug("wrote %s (%d rows)", path, len(df))
    return path


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if math.isfinite(value) else str(value)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.debug("wrote %s", path)
    return path


# =============================================================================
# TABLES
# =============================================================================

def mass_column(interval):
    a, b = interval
    return f"mass[{a:g}:{b:g}]"


def snapshots_frame(traj, xs, summation="sequential"):
    """Mollified density (σ of the run) on ``xs`` at every recorded time."""
    xs = np.asarray(xs, dtype=float)
    sigma = traj.config.sigma
    frames = [
        pd.DataFrame({"t": np.full(xs.size, t), "x": xs,
                      "f": mollify(ens, sigma, xs, summation=summation)})
        for t, ens in zip(traj.times, traj.snapshots)
    ]
    return pd.concat(frames, ignore_index=True)[["t", "x", "f"]]


def particles_frame(traj):
    frames = [
        pd.DataFrame({"t": np.full(len(ens), t), "index": np.arange(len(ens)),
                      "position": ens.positions, "weight": ens.weights})
        for t, ens in zip(traj.times, traj.snapshots)
    ]
    return pd.concat(frames, ignore_index=True)[["t", "index", "position", "weight"]]


def diagnostics_frame(traj):
    rows = []
    for d in traj.diagnostics:
        row = {
            "t": d.t,
            "min": d.min_position,
            "max": d.max_position,
            "diameter": d.diameter,
            "concentration": d.concentration,
            "clusters": d.clusters,
            "density_peaks": d.density_peaks,
        }
        for interval, mass in zip(d.intervals, d.interval_masses):
            row[mass_column(interval)] = mass
        rows.append(row)
    columns = ["t", "min", "max", "diameter", "concentration", "clusters", "density_peaks"]
    columns += [mass_column(iv) for iv in traj.config.intervals]
    return pd.DataFrame(rows, columns=columns)


# =============================================================================
# CONSOLE
# =============================================================================

def _out(stream):
    return sys.stdout if stream is None else stream


def print_banner(title, stream=None):
    stream = _out(stream)
    print("\n" + "=" * BANNER_WIDTH, file=stream)
    print(f"  {title}", file=stream)
    print("=" * BANNER_WIDTH, file=stream)


def status(passed):
    return "✅ PASS" if passed else "❌ FAIL"


def print_checks(checks, stream=None):
    stream = _out(stream)
    print(f"  {'Check':<32} {'Value':>12} {'Limit':>12}  {'Status'}", file=stream)
    print(f"  {'-'*32} {'-'*12} {'-'*12}  {'-'*8}", file=stream)
    for c in checks:
        limit = f"{c.relation}{c.threshold:.3g}"
        print(f"  {c.name:<32} {c.value:>12.4g} {limit:>12}  {status(c.passed)}", file=stream)
    failed = [c.name for c in checks if not c.passed]
    print(f"\n  {len(checks) - len(failed)}/{len(checks)} checks passed", file=stream)


def print_convergence(report, stream=None):
    stream = _out(stream)
    print(f"  {'dx':>10} {'dt':>10} {'error':>14} {'ratio':>8}", file=stream)
    print(f"  {'-'*10} {'-'*10} {'-'*14} {'-'*8}", file=stream)
    for r in report.rows:
        ratio = "" if r.ratio is None else f"{r.ratio:.2f}"
        print(f"  {r.dx:>10.6g} {r.dt:>10.6g} {r.error:>14.3e} {ratio:>8}", file=stream)


def print_outputs(paths, stream=None):
    stream = _out(stream)
    print("\n  Files written:", file=stream)
    for p in paths:
        print(f"    {p}", file=stream)
