"""Command-line front end.

Subcommands cover the whole workflow: build and inspect meshes, run a
time history, run 1D companion columns, batch-generate ensembles, and
post-process waveforms and telemetry.  Configs are JSON files; waves
come from a CSV or the seeded band-limited generator.

Exit codes: 0 ok, 1 partial failure, 2 bad input, 3 solver failure,
4 memory-tier failure.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import ensemble as ensemble_mod
from .engine import Model, RunConfig, run_time_history, write_waveforms_csv
from .errors import CapacityError, InputError, SolverError, TransferError
from .mesh import MeshConfig, extract_column, generate_layered_box, save_mesh
from .postproc import (default_periods, velocity_response_spectrum,
                       format_report, summarize_telemetry,
                       write_telemetry_jsonl)


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InputError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc})")


def _mesh_config(obj):
    spec = obj.get("mesh")
    if spec is None:
        raise InputError("config is missing the 'mesh' section")
    if isinstance(spec, str):
        spec = _load_json(spec)
    return MeshConfig.from_dict(spec)


def _read_numeric_csv(path):
    """Numeric rows of a comma-separated file; leading header lines and
    '#' comments are skipped."""
    rows = []
    try:
        fh = open(path)
    except FileNotFoundError:
        raise InputError(f"file not found: {path}")
    with fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            try:
                rows.append([float(tok) for tok in text.split(",")])
            except ValueError:
                if rows:
                    raise InputError(f"{path}: line {lineno}: "
                                     f"non-numeric row {text!r}")
                continue
    if not rows:
        raise InputError(f"{path}: no numeric data")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise InputError(f"{path}: rows have inconsistent column counts")
    return np.array(rows, dtype=np.float64)


def _wave_csv_samples(path):
    data = _read_numeric_csv(path)
    if data.shape[1] == 7:          # t, ux..uz, vx..vz waveform layout
        return data[:, 4:7]
    if data.shape[1] == 4:          # t, vx, vy, vz
        return data[:, 1:4]
    if data.shape[1] == 3:          # vx, vy, vz
        return data
    raise InputError(f"{path}: expected 3, 4 or 7 columns, "
                     f"got {data.shape[1]}")


def _wave_samples(obj, nt, dt, seed_override=None):
    spec = obj.get("wave")
    if not isinstance(spec, dict) or len(spec) != 1:
        raise InputError("config needs a 'wave' section with exactly one "
                         "of 'csv' or 'random'")
    if "csv" in spec:
        return _wave_csv_samples(spec["csv"])
    if "random" in spec:
        opts = dict(spec["random"])
        seed = opts.pop("seed", 0)
        if seed_override is not None:
            seed = seed_override
        kwargs = {}
        if "bounds" in opts:
            kwargs["bounds"] = tuple(opts.pop("bounds"))
        if "cutoff_hz" in opts:
            kwargs["cutoff_hz"] = float(opts.pop("cutoff_hz"))
        if opts:
            raise InputError(f"unknown wave options: {sorted(opts)}")
        # generate at least the generator's minimum record length; the
        # run only consumes the first nt samples
        n_gen = max(nt, int(np.ceil(ensemble_mod.MIN_RECORD_SECONDS / dt))
                    + 1)
        wave = ensemble_mod.generate_random_wave(seed, n_gen, dt, **kwargs)
        return wave.samples
    raise InputError(f"unknown wave source {sorted(spec)}")


def _apply_run_overrides(run_dict, args):
    for name in ("strategy", "partition_elems", "fast_capacity_bytes",
                 "bandwidth", "latency"):
        value = getattr(args, name, None)
        if value is not None:
            run_dict[name] = value
    return run_dict


# ---------------------------------------------------------------------------
# subcommands


def _cmd_mesh(args):
    config = MeshConfig.from_dict(_load_json(args.config))
    mesh = generate_layered_box(config)
    mats = ", ".join(m.name for m in config.materials)
    print(f"{mesh.n_elements} elements, {mesh.n_nodes} nodes")
    print(f"box {config.lx} x {config.ly} x {config.lz} m, "
          f"{len(config.interfaces)} interface(s), materials: {mats}")
    if args.output:
        save_mesh(mesh, args.output)
        print(f"wrote {args.output}")
    return 0


def _cmd_run(args):
    obj = _load_json(args.config)
    run_dict = _apply_run_overrides(dict(obj.get("run", {})), args)
    cfg = RunConfig.from_dict(run_dict)
    model = Model(generate_layered_box(_mesh_config(obj)))
    wave = _wave_samples(obj, cfg.nt, cfg.dt, seed_override=args.seed)

    result = run_time_history(model, wave, cfg)

    os.makedirs(args.output, exist_ok=True)
    paths = write_waveforms_csv(result, args.output)
    telemetry_path = os.path.join(args.output, "telemetry.jsonl")
    write_telemetry_jsonl(telemetry_path, result.telemetry)
    summary = {
        "strategy": result.strategy,
        "n_steps": cfg.nt,
        "dt": cfg.dt,
        "peak_surface_velocity": float(result.vmax_norm.max()),
        "final_hysteretic_damping": float(result.hbar[-1]),
        "telemetry": summarize_telemetry(telemetry_path),
    }
    with open(os.path.join(args.output, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{cfg.nt} steps with {result.strategy}, "
          f"peak surface velocity {summary['peak_surface_velocity']:.4g} "
          f"m/s")
    for path in paths:
        print(f"wrote {path}")
    print(f"wrote {telemetry_path}")
    return 0


def _cmd_column1d(args):
    obj = _load_json(args.config)
    opts = dict(obj.get("column", {}))
    try:
        nt, dt = int(opts.pop("nt")), float(opts.pop("dt"))
        x, y = float(obj["x"]), float(obj["y"])
    except KeyError as exc:
        raise InputError(f"column config is missing {exc}")
    column = extract_column(_mesh_config(obj), x, y)
    wave = _wave_samples(obj, nt, dt, seed_override=args.seed)

    result = ensemble_mod.run_column(column, wave, nt, dt, **opts)

    cols = np.column_stack([result.times, result.surface_u.T,
                            result.surface_v.T])
    header = f"# 1D column at ({x}, {y})\nt,ux,uy,uz,vx,vy,vz"
    np.savetxt(args.output, cols, delimiter=",", header=header, comments="")
    print(f"wrote {args.output}")
    return 0


def _cmd_spectra(args):
    data = _read_numeric_csv(args.csv)
    if data.shape[1] == 7:
        t, vel = data[:, 0], data[:, 4:7]
    elif data.shape[1] == 4:
        t, vel = data[:, 0], data[:, 1:4]
    else:
        raise InputError(f"{args.csv}: expected a t,ux..,vx.. waveform or "
                         f"t,vx,vy,vz velocity file, got "
                         f"{data.shape[1]} columns")
    if data.shape[0] < 2:
        raise InputError(f"{args.csv}: need at least two samples")
    steps = np.diff(t)
    dt = float(steps[0])
    if not (dt > 0.0 and np.allclose(steps, dt, rtol=1e-6, atol=0.0)):
        raise InputError(f"{args.csv}: time column is not uniformly spaced")

    periods = np.geomspace(args.t_min, args.t_max, args.n_periods)
    accel = np.gradient(vel, dt, axis=0)
    sv = np.column_stack(
        [velocity_response_spectrum(accel[:, c], dt, h=args.damping,
                                    periods=periods).sv
         for c in range(3)])
    out = np.column_stack([periods, sv])
    np.savetxt(args.output, out, delimiter=",",
               header="period,sv_x,sv_y,sv_z", comments="")
    print(f"wrote {args.output} ({args.n_periods} periods, "
          f"damping {args.damping})")
    return 0


def _cmd_report(args):
    print(format_report(summarize_telemetry(args.telemetry)))
    return 0


def _cmd_ensemble(args):
    obj = _load_json(args.config)
    opts = dict(obj.get("ensemble", {}))
    if args.seed is not None:
        opts["seed"] = args.seed
    opts["observation_points"] = [tuple(p) for p in
                                  opts.get("observation_points", [])]
    if "bounds" in opts:
        opts["bounds"] = tuple(opts["bounds"])
    spec = ensemble_mod.EnsembleSpec(**opts)
    model = Model(generate_layered_box(_mesh_config(obj)))
    strategy = args.strategy or obj.get("strategy", "slow-only")

    records = ensemble_mod.run_ensemble(
        model, spec, strategy=strategy, resume=not args.no_resume,
        pair=not args.no_pair, **obj.get("run", {}))

    manifest = _load_json(os.path.join(spec.out_dir, "manifest.json"))
    failed = manifest.get("failed", {})
    print(f"{len(records)} cases done, {len(failed)} failed "
          f"({spec.out_dir})")
    for cid, message in sorted(failed.items(), key=lambda kv: int(kv[0])):
        print(f"  case {cid}: {message}", file=sys.stderr)
    return 1 if failed else 0


def _cmd_export_dataset(args):
    manifest_path = os.path.join(args.ensemble_dir, "manifest.json")
    manifest = _load_json(manifest_path)
    done = sorted(manifest.get("done", []))
    if not done:
        raise InputError(f"{manifest_path}: no completed cases to export")
    records = [ensemble_mod.load_case(
                   ensemble_mod.case_path(args.ensemble_dir, cid))
               for cid in done]
    ensemble_mod.export_dataset(records, args.output)
    print(f"wrote {args.output} ({len(records)} cases)")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_run_flags(p):
    p.add_argument("--strategy", help="execution strategy override")
    p.add_argument("--partition-elems", type=int, dest="partition_elems")
    p.add_argument("--fast-capacity-bytes", type=int,
                   dest="fast_capacity_bytes")
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--latency", type=float)
    p.add_argument("--seed", type=int, help="random wave seed override")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tieredfem",
        description="Nonlinear 3D seismic response on tiered memory.")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="{mesh,run,ensemble,column1d,"
                                        "spectra,report,export-dataset}")

    p = sub.add_parser("mesh", help="build a layered box mesh from a "
                                    "JSON config")
    p.add_argument("config")
    p.add_argument("-o", "--output", help="write the mesh container here")
    p.set_defaults(func=_cmd_mesh)

    p = sub.add_parser("run", help="run one time history")
    p.add_argument("config")
    p.add_argument("-o", "--output", required=True,
                   help="output directory for waveforms and telemetry")
    _add_run_flags(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("ensemble", help="generate a case archive")
    p.add_argument("config")
    p.add_argument("--strategy")
    p.add_argument("--seed", type=int)
    p.add_argument("--no-resume", action="store_true",
                   help="recompute cases even if their files exist")
    p.add_argument("--no-pair", action="store_true",
                   help="run batched-strategy cases one at a time")
    p.set_defaults(func=_cmd_ensemble)

    p = sub.add_parser("column1d", help="run the 1D companion column")
    p.add_argument("config")
    p.add_argument("-o", "--output", required=True, help="waveform CSV path")
    p.add_argument("--seed", type=int, help="random wave seed override")
    p.set_defaults(func=_cmd_column1d)

    p = sub.add_parser("spectra", help="velocity response spectra of a "
                                       "waveform CSV")
    p.add_argument("csv")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--damping", type=float, default=0.05)
    p.add_argument("--t-min", type=float, default=0.1, dest="t_min")
    p.add_argument("--t-max", type=float, default=10.0, dest="t_max")
    p.add_argument("--n-periods", type=int, default=100, dest="n_periods")
    p.set_defaults(func=_cmd_spectra)

    p = sub.add_parser("report", help="summarize a telemetry JSONL file")
    p.add_argument("telemetry")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("export-dataset", help="pack finished ensemble "
                                              "cases into one container")
    p.add_argument("ensemble_dir")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_export_dataset)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    except (CapacityError, TransferError) as exc:
        print(f"memory tier error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
