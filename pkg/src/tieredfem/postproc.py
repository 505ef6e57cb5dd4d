"""Post-processing: SDOF response spectra, surface maxima, telemetry reports.

All functions are pure transforms over arrays already in memory; plot
emission elsewhere is data-only (CSV/JSON).
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .memtier import StepTelemetry

DEFAULT_DAMPING = 0.05
DEFAULT_PERIOD_RANGE = (0.1, 10.0)
DEFAULT_PERIOD_COUNT = 100


# ---------------------------------------------------------------------------
# response spectra


@dataclass
class ResponseSpectrum:
    periods: np.ndarray   # (np,) s, strictly increasing
    sv: np.ndarray        # (np,) max |relative velocity|
    damping: float


@dataclass
class MaxVelocityProfile:
    positions: np.ndarray   # (n,) m along the line
    values: np.ndarray      # (n,) max velocity measure, >= 0
    measure: str


def default_periods():
    lo, hi = DEFAULT_PERIOD_RANGE
    return np.geomspace(lo, hi, DEFAULT_PERIOD_COUNT)


# keep >= this many integration steps per oscillator period (forcing is
# interpolated linearly onto the refined grid); bounded so absurdly short
# periods cannot explode the cost
_STEPS_PER_PERIOD = 40
_MAX_SUBSTEPS = 64


def velocity_response_spectrum(accel, dt, h=DEFAULT_DAMPING, periods=None):
    """Max relative velocity of damped SDOF oscillators under base
    acceleration, via average-acceleration Newmark per period.

    Oscillators shorter than the record's sampling are sub-stepped, so the
    spectrum is converged for every period down to a few input samples."""
    a_g = np.asarray(accel, dtype=np.float64)
    if a_g.ndim != 1 or a_g.size < 2:
        raise InputError(f"need a 1D series, got shape {a_g.shape}")
    if not np.isfinite(a_g).all():
        raise InputError("acceleration series contains non-finite samples")
    if not dt > 0.0:
        raise InputError(f"time step must be positive, got {dt}")
    if not 0.0 <= h < 1.0:
        raise InputError(f"damping ratio must be in [0, 1), got {h}")
    periods = default_periods() if periods is None else \
        np.asarray(periods, dtype=np.float64)
    if periods.ndim != 1 or periods.size == 0 or np.any(periods <= 0.0):
        raise InputError("periods must be positive")
    if np.any(np.diff(periods) <= 0.0):
        raise InputError("periods must be strictly increasing")

    m = int(min(_MAX_SUBSTEPS,
                max(1, np.ceil(_STEPS_PER_PERIOD * dt / periods[0]))))
    if m > 1:
        t = dt * np.arange(a_g.size)
        tf = (dt / m) * np.arange(m * (a_g.size - 1) + 1)
        a_g = np.interp(tf, t, a_g)
        dt = dt / m

    omega = 2.0 * np.pi / periods
    c = 2.0 * h * omega
    k = omega * omega
    a_lhs = 4.0 / dt**2 + c * (2.0 / dt) + k
    u = np.zeros_like(omega)
    v = np.zeros_like(omega)
    a = np.zeros_like(omega)
    sv = np.zeros_like(omega)
    for f in -a_g[1:]:
        rhs = (f + (4.0 / dt**2) * u + (4.0 / dt) * v + a
               + c * ((2.0 / dt) * u + v))
        un = rhs / a_lhs
        an = (4.0 / dt**2) * (un - u) - (4.0 / dt) * v - a
        v = v + 0.5 * dt * (a + an)
        u, a = un, an
        np.maximum(sv, np.abs(v), out=sv)
    return ResponseSpectrum(periods, sv, float(h))


# ---------------------------------------------------------------------------
# surface maxima


_MEASURES = {"x": 0, "y": 1, "z": 2}


def _surface_measure(result, measure):
    if result.vmax_norm is None or result.vmax_comp is None:
        raise InputError("run result carries no surface velocity maxima")
    if measure == "norm":
        return np.asarray(result.vmax_norm)
    if measure in _MEASURES:
        return np.asarray(result.vmax_comp)[:, _MEASURES[measure]]
    raise InputError(f"unknown measure {measure!r}; "
                     f"use norm or one of x, y, z")


def max_velocity_map(model, result, measure="norm"):
    """(surface xy coordinates (n, 2), per-node max of the chosen velocity
    measure over the whole run)."""
    vals = _surface_measure(result, measure)
    coords = model.mesh.coords[model.dof_map.surface_nodes][:, :2]
    if vals.shape[0] != coords.shape[0]:
        raise InputError("surface maxima do not match the model's surface")
    return coords, vals


def velocity_profile(model, result, y, measure="x"):
    """Surface maxima along the line y = const, ordered by x."""
    coords, vals = max_velocity_map(model, result, measure)
    on_line = np.isclose(coords[:, 1], y)
    if not on_line.any():
        raise InputError(f"no surface nodes on the line y = {y}")
    order = np.argsort(coords[on_line, 0])
    return MaxVelocityProfile(coords[on_line, 0][order],
                              vals[on_line][order], measure)


# ---------------------------------------------------------------------------
# telemetry summaries


_SUM_FIELDS = ("solver_s", "constitutive_s", "transfer_up_s",
               "transfer_down_s", "crs_update_s", "overlapped_s",
               "multispring_stage_s", "bytes_up", "bytes_down",
               "solver_iterations")
_PEAK_FIELDS = ("peak_fast_bytes", "resident_watermark")


def write_telemetry_jsonl(path, telemetry):
    """One JSON object per step; the exact per-step record, no aggregation."""
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as f:
        for t in telemetry:
            f.write(t.to_json() + "\n")
    os.replace(tmp, path)
    return str(path)


def _parse_record(obj, lineno):
    if not isinstance(obj, dict):
        raise InputError(f"line {lineno}: expected a step record object")
    rec = {}
    for name in ("step", "strategy") + _SUM_FIELDS + _PEAK_FIELDS:
        if name not in obj:
            raise InputError(f"line {lineno}: missing field {name!r}")
        rec[name] = obj[name]
    if not isinstance(rec["strategy"], str):
        raise InputError(f"line {lineno}: strategy must be a string")
    for name in _SUM_FIELDS + _PEAK_FIELDS + ("step",):
        if isinstance(rec[name], bool) or not isinstance(rec[name],
                                                         (int, float)):
            raise InputError(f"line {lineno}: field {name!r} must be numeric")
    return rec


def summarize_telemetry(stream):
    """Exact totals, per-step means and peak watermarks of a telemetry
    stream (path to a JSONL file, or an iterable of lines)."""
    if isinstance(stream, (str, os.PathLike)):
        with open(stream) as f:
            lines = f.readlines()
    else:
        lines = list(stream)
    records = []
    for i, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InputError(f"line {i}: invalid JSON ({exc.msg})") from exc
        records.append(_parse_record(obj, i))
    if not records:
        raise InputError("telemetry stream contains no step records")
    totals = {name: sum(r[name] for r in records) for name in _SUM_FIELDS}
    n = len(records)
    return {
        "n_steps": n,
        "strategy": ", ".join(sorted({r["strategy"] for r in records})),
        "totals": totals,
        "means": {name: totals[name] / n for name in _SUM_FIELDS},
        "peaks": {name: max(r[name] for r in records)
                  for name in _PEAK_FIELDS},
    }


def format_report(summary):
    """Plain-text table of the summary: one row per stage/counter."""
    rows = [
        ("solver", "solver_s", "s"),
        ("multispring compute", "constitutive_s", "s"),
        ("transfer up", "transfer_up_s", "s"),
        ("transfer down", "transfer_down_s", "s"),
        ("matrix update", "crs_update_s", "s"),
        ("overlapped", "overlapped_s", "s"),
        ("multispring stage", "multispring_stage_s", "s"),
        ("bytes up", "bytes_up", "B"),
        ("bytes down", "bytes_down", "B"),
        ("solver iterations", "solver_iterations", ""),
    ]
    out = [f"strategy: {summary['strategy']}   steps: {summary['n_steps']}",
           f"{'stage':<22}{'total':>16}{'per step':>16}"]
    for label, key, unit in rows:
        total, mean = summary["totals"][key], summary["means"][key]
        if unit == "B":
            out.append(f"{label:<22}{total:>16,}{mean:>16,.0f}")
        elif unit == "s":
            out.append(f"{label:<22}{total:>16.6f}{mean:>16.6f}")
        else:
            out.append(f"{label:<22}{total:>16}{mean:>16.2f}")
    out.append(f"peak fast bytes: {summary['peaks']['peak_fast_bytes']:,}")
    out.append("resident partition watermark: "
               f"{summary['peaks']['resident_watermark']}")
    return "\n".join(out)
