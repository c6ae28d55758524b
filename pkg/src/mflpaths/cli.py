"""Command-line entry point: ``mflpaths {simulate,infer,sample-paths,evaluate,full-run}``.

Every command writes ``manifest.json`` next to its outputs. Exit codes are
0 on success, 2 on configuration or usage errors and 3 on runtime errors.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__, kernels
from .bridge import dump_solution_csv
from .errors import ConfigError, MFLError
from .evaluate import EvalReport, branch_fraction, lower_branch_classifier, per_time_distances
from .io import (apply_auto_scaling, config_from_dict, config_hash, config_to_dict, load_config,
                 load_snapshots, read_marginals_csv, write_marginals_csv, write_snapshots)
from .optimizer import run, solve_bridges
from .pathspace import PathLaw, reconstruct_paths
from .simulate import bifurcation_benchmark, bistable_benchmark
from .types import MarginalState, SnapshotSeries

log = logging.getLogger("mflpaths")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

# Defaults used by full-run when no config file is given (bifurcation setup).
BENCHMARK_CONFIGS = {
    "bifurcation": {"lambda": 0.05, "sigma": 0.5, "tau": 0.25, "m": 100, "eta": 0.1, "iterations": 2500},
    "bistable": {"lambda": 0.025, "sigma": 0.5, "tau": 1.0, "m": 100, "eta": 0.1, "iterations": 2500,
                 "growth": {"kind": "tanh", "scale": 10.0, "slope": 2.0, "axis": 0}},
}


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    return {"mflpaths": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version(), "backend": kernels.BACKEND}


def write_manifest(out_dir: Path, command: str, args: dict, config=None, schedule=None, seed=None,
                   inputs=(), outputs=()) -> Path:
    """Record what produced the files in ``out_dir``; no timestamps, so reruns compare equal.

    ``simulate`` and ``infer`` write ``manifest.json``; commands that add files
    to an existing run directory write ``manifest_<command>.json`` so the
    inference record stays intact.
    """
    payload = {
        "command": command,
        "args": args,
        "seed": seed,
        "versions": _versions(),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": sorted(str(Path(p).name) for p in outputs),
    }
    if config is not None:
        payload["config"] = config_to_dict(config, schedule)
        payload["config_hash"] = config_hash(config, schedule)
    name = "manifest.json" if command in ("simulate", "infer", "full-run") else f"manifest_{command}.json"
    path = out_dir / name
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _read_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"manifest {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"manifest {path} is not valid JSON ({exc})") from None


# ---------------------------------------------------------------- simulate

def _make_benchmark(name, N, seed, growth):
    if name == "bifurcation":
        return bifurcation_benchmark(N=N, seed=seed)
    if name == "bistable":
        return bistable_benchmark(seed=seed, growth=growth)
    raise ConfigError(f"unknown benchmark {name!r}")


def cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bench = _make_benchmark(args.benchmark, args.N, args.seed, args.growth == "on")
    snaps, truth = out / "snapshots.csv", out / "truth.csv"
    write_snapshots(bench.series, snaps, weights=False)
    write_snapshots(bench.truth, truth, weights=False)
    outputs = [snaps, truth]
    if args.benchmark == "bistable":
        ends = out / "founder_endpoints.csv"
        pts = bench.simulation.founder_endpoints()
        np.savetxt(ends, pts, delimiter=",", header=",".join(f"x{k + 1}" for k in range(pts.shape[1])),
                   comments="", fmt="%.17g")
        outputs.append(ends)
    write_manifest(out, "simulate", {"benchmark": args.benchmark, "N": args.N, "growth": args.growth},
                   seed=args.seed, outputs=outputs)
    log.info("wrote %d timepoints to %s", bench.series.T, out)
    return EXIT_OK


# ---------------------------------------------------------------- infer

def _infer(config, schedule, data_path: Path, out: Path, threads: int, resume=None, args_record=None):
    series = load_snapshots(data_path)
    config = apply_auto_scaling(series, config)
    out.mkdir(parents=True, exist_ok=True)
    diag = out / "diagnostics.jsonl"
    ckpt_dir = out / "checkpoints" if config.checkpoint_every else None

    def dump_marginals(iteration, report, state):
        if config.checkpoint_every and iteration % config.checkpoint_every == 0:
            write_marginals_csv(state.marginals.clouds, series.original_times,
                                out / "checkpoints" / f"marginals_{iteration}.csv")

    if ckpt_dir is not None:
        ckpt_dir.mkdir(exist_ok=True)
    result = run(series, config, schedule, callbacks=[dump_marginals] if ckpt_dir else (), diagnostics=diag,
                 checkpoint_dir=ckpt_dir, resume=resume, threads=threads)
    marg = out / "marginals.csv"
    write_marginals_csv(result.marginals.clouds, series.original_times, marg)
    bdir = out / "bridges"
    bdir.mkdir(exist_ok=True)
    for i, sol in enumerate(result.final_bridges):
        dump_solution_csv(sol, bdir / f"bridge_{i}.csv")
    record = dict(args_record or {})
    record["data"] = str(data_path)
    write_manifest(out, "infer", record, config, schedule, config.seed, inputs=[data_path],
                   outputs=[marg, diag, bdir])
    return result


def _threads(args) -> int:
    return args.threads if args.threads else (os.cpu_count() or 1)


def cmd_infer(args) -> int:
    if args.from_manifest:
        man = _read_manifest(args.from_manifest)
        if man.get("command") not in ("infer", "full-run"):
            raise ConfigError("--from-manifest needs a manifest written by infer")
        config, schedule = config_from_dict(man["config"])
        data = Path(args.data or man["args"]["data"])
    else:
        if not args.config or not args.data:
            raise ConfigError("infer needs --config and --data (or --from-manifest)")
        config, schedule = load_config(args.config)
        data = Path(args.data)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    if args.iterations is not None:
        config = config.replace(iterations=args.iterations)
    _infer(config, schedule, data, Path(args.out), _threads(args), resume=args.resume,
           args_record={"resume": args.resume})
    return EXIT_OK


# ---------------------------------------------------------------- sample-paths

def _load_run(run_dir: Path):
    man = _read_manifest(run_dir)
    config, _ = config_from_dict(man["config"])
    clouds = read_marginals_csv(run_dir / "marginals.csv")
    with open(run_dir / "marginals.csv", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        times = list(dict.fromkeys(float(r[0]) for r in reader if r))
    series = SnapshotSeries.from_arrays(list(clouds), times)
    return config, MarginalState(clouds, 0), series


def cmd_sample_paths(args) -> int:
    run_dir = Path(args.run)
    config, state, series = _load_run(run_dir)
    bridges = solve_bridges(state.clouds, series, config, config.tau)
    law = PathLaw.from_bridges(bridges, series.original_times, config.tau * _time_factor(series))
    if law.growth_heuristic:
        log.warning("couplings carry growth reweighting; sampled paths follow the chained plans heuristically")
    paths = reconstruct_paths(law, args.count, grid_resolution=args.grid, seed=args.seed)
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    pfile, sfile = out / "paths.csv", out / "skeleton.csv"
    d = paths.positions.shape[2]
    with open(pfile, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path_id", "t"] + [f"x{k + 1}" for k in range(d)])
        for pid in range(len(paths)):
            for t, x in zip(paths.times, paths.positions[pid]):
                w.writerow([pid, repr(float(t))] + [repr(float(v)) for v in x])
    with open(sfile, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path_id", "t", "particle"])
        for pid in range(len(paths)):
            for t, j in zip(series.original_times, paths.skeleton[pid]):
                w.writerow([pid, repr(float(t)), int(j)])
    if args.lower_branch:
        frac = branch_fraction(paths, lower_branch_classifier())
        (out / "branch_fraction.json").write_text(json.dumps({"lower_branch_fraction": frac}) + "\n",
                                                  encoding="utf-8")
    write_manifest(out, "sample-paths", {"run": str(run_dir), "count": args.count, "grid": args.grid},
                   config, seed=args.seed, inputs=[run_dir / "marginals.csv"], outputs=[pfile, sfile])
    return EXIT_OK


def _time_factor(series: SnapshotSeries) -> float:
    """Diffusivity conversion from unit time to the original time axis."""
    span = series.original_times[-1] - series.original_times[0]
    return 1.0 / span


# ---------------------------------------------------------------- evaluate

def cmd_evaluate(args) -> int:
    run_dir = Path(args.run)
    _, state, series = _load_run(run_dir)
    truth = load_snapshots(args.truth)
    comparisons = {}
    if args.compare:
        raw = load_snapshots(args.compare)
        d2 = per_time_distances([s.points for s in raw], truth)
        comparisons["snapshots"] = {"energy_distance_sq": [float(x) for x in d2],
                                    "rms_energy_distance": float(np.sqrt(max(d2.mean(), 0.0)))}
    report = EvalReport.build(state.clouds, truth, comparisons)
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(out / "eval.json")
    report.write_csv(out / "eval.csv")
    inputs = [run_dir / "marginals.csv", Path(args.truth)] + ([Path(args.compare)] if args.compare else [])
    write_manifest(out, "evaluate", {"run": str(run_dir), "truth": args.truth, "compare": args.compare},
                   inputs=inputs, outputs=[out / "eval.json", out / "eval.csv"])
    print(json.dumps({"rms_energy_distance": report.rms,
                      **{f"{k}_rms": v["rms_energy_distance"] for k, v in comparisons.items()}}))
    return EXIT_OK


# ---------------------------------------------------------------- full-run

def cmd_full_run(args) -> int:
    out = Path(args.out)
    sim_dir, run_dir = out / "data", out / "run"
    sim_args = argparse.Namespace(benchmark=args.benchmark, N=args.N, seed=args.seed, growth=args.growth,
                                  out=str(sim_dir))
    cmd_simulate(sim_args)
    if args.config:
        config, schedule = load_config(args.config)
    else:
        cfg = dict(BENCHMARK_CONFIGS[args.benchmark])
        if args.benchmark == "bistable" and args.growth == "off":
            cfg.pop("growth")
        config, schedule = config_from_dict(cfg)
    config = config.replace(seed=args.seed)
    if args.iterations is not None:
        config = config.replace(iterations=args.iterations)
    _infer(config, schedule, sim_dir / "snapshots.csv", run_dir, _threads(args))
    cmd_sample_paths(argparse.Namespace(run=str(run_dir), count=args.count, grid=args.grid, seed=args.seed,
                                        out=None, lower_branch=args.benchmark == "bistable"))
    return cmd_evaluate(argparse.Namespace(run=str(run_dir), truth=str(sim_dir / "truth.csv"),
                                           compare=str(sim_dir / "snapshots.csv"), out=None))


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mflpaths", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default=os.environ.get("MFLPATHS_LOG_LEVEL", "WARNING"))
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, threads=False, seed_default=0):
        p.add_argument("--seed", type=int, default=seed_default)
        if threads:
            p.add_argument("--threads", type=int, default=0, help="worker threads (default: all cores)")

    p = sub.add_parser("simulate", help="generate a benchmark dataset")
    p.add_argument("--benchmark", required=True, choices=["bifurcation", "bistable"])
    p.add_argument("--N", type=int, default=64, help="particles per intermediate timepoint (bifurcation)")
    p.add_argument("--growth", choices=["on", "off"], default="on", help="branching (bistable)")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("infer", help="run MFL dynamics on a snapshot CSV")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--from-manifest", help="re-run the infer recorded in this manifest")
    p.add_argument("--iterations", type=int)
    common(p, threads=True, seed_default=None)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("sample-paths", help="sample trajectories from a finished run")
    p.add_argument("--run", required=True)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--grid", type=int, default=20, help="grid points per interval")
    p.add_argument("--out")
    p.add_argument("--lower-branch", action="store_true", help="also report the lower-branch fraction")
    common(p)
    p.set_defaults(func=cmd_sample_paths)

    p = sub.add_parser("evaluate", help="energy distances of a run to ground truth")
    p.add_argument("--run", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--compare", help="snapshot CSV scored against the same truth")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("full-run", help="simulate, infer, sample paths and evaluate")
    p.add_argument("--benchmark", required=True, choices=["bifurcation", "bistable"])
    p.add_argument("--N", type=int, default=64)
    p.add_argument("--growth", choices=["on", "off"], default="on")
    p.add_argument("--config")
    p.add_argument("--iterations", type=int)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--grid", type=int, default=20)
    p.add_argument("--out", required=True)
    common(p, threads=True)
    p.set_defaults(func=cmd_full_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MFLError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
