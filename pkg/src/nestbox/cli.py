"""Batch command-line front end.

Subcommands:

* ``nestbox simulate --config C --out DIR [--seed S]`` writes the
  occupancy statistic CSVs (cumulative, threshold_counts, histogram)
  plus a run manifest.
* ``nestbox verify --config C --out DIR`` runs the replicated experiment
  and writes report.json plus detail CSVs; exits 0 only if every binding
  verdict passes.
* ``nestbox limits --out DIR --grid 0.5,1.0 --levels 2 [spec args]``
  writes the limit covariance matrix and optionally sampled limit paths.

Exit codes: 0 pass, 1 verdict failure, 2 usage/config error,
3 numeric/precision failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config
from .csvio import (
    write_covariance_csv,
    write_occupancy_csvs,
    write_paths_csv,
    write_report_csvs,
)
from .errors import ConfigError, NestboxError, NoLimitTheoremError, NumericError
from .limits import CovBase, LimitSpec, assemble_covariance, sample_limit_paths
from .occupancy import simulate
from .rng import replicate_seed
from .verify import run_experiment

EXIT_OK = 0
EXIT_VERDICT = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _default_threads() -> int:
    env = os.environ.get("NESTBOX_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, seed, config_echo: str | None, files):
    manifest = {
        "schema_version": 1,
        "tool": f"nestbox {__version__}",
        "command": command,
        "master_seed": seed,
        "started_utc": _write_manifest.started,
        "finished_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "config_echo": config_echo,
        "outputs": [
            {
                "path": str(Path(p).relative_to(out_dir)),
                "sha256": _sha256(Path(p)),
                "bytes": Path(p).stat().st_size,
            }
            for p in files
        ],
    }
    path = out_dir / "run_manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _json_mirror(out_dir: Path, csv_paths):
    """--format json: mirror each CSV into a JSON records file."""
    from .csvio import read_rows

    mirrored = []
    for p in csv_paths:
        header, rows = read_rows(p)
        jp = Path(p).with_suffix(".json")
        with open(jp, "w", encoding="utf-8") as fh:
            json.dump(
                [dict(zip(header, row)) for row in rows], fh, indent=1, sort_keys=True
            )
            fh.write("\n")
        mirrored.append(jp)
    return mirrored


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else cfg.occupancy.get("master_seed", 0)
    if args.seed is None and cfg.experiment is not None:
        seed = cfg.experiment["master_seed"]
    results = []
    occ = cfg.occupancy_config()
    for rep in range(cfg.simulate_replicates):
        rng = np.random.default_rng(replicate_seed(seed, rep))
        results.append(simulate(cfg.law, occ, rng))
    files = write_occupancy_csvs(out_dir, results)
    if args.format == "json":
        files += _json_mirror(out_dir, files)
    _write_manifest(out_dir, "simulate", seed, cfg.raw_text, files)
    print(f"simulate: wrote {len(files)} files to {out_dir}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    exp = cfg.experiment_config(seed_override=args.seed, threads=args.threads)
    report = run_experiment(exp)
    files = write_report_csvs(out_dir, report)
    report_path = out_dir / "report.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    files.append(report_path)
    if args.format == "json":
        files += _json_mirror(out_dir, [f for f in files if f.suffix == ".csv"])
    _write_manifest(out_dir, "verify", exp.master_seed, cfg.raw_text, files)
    for v in report.verdicts:
        status = "PASS" if v.passed else ("SKIP" if v.passed is None else "FAIL")
        binding = "binding" if v.binding else "advisory"
        print(f"verdict {v.name}: {status} ({binding}) - {v.detail}")
    if not report.passed:
        print("verify: FAILED", file=sys.stderr)
        return EXIT_VERDICT
    print(f"verify: all binding verdicts passed; report in {out_dir}")
    return EXIT_OK


def _spec_from_args(args) -> LimitSpec:
    if args.base == "bm":
        base = CovBase.brownian()
    elif args.base == "rl":
        base = CovBase.riemann_liouville(args.q)
    elif args.base == "tcbm":
        base = CovBase.time_changed_bm(args.q)
    else:
        raise ConfigError(f"--base must be bm/rl/tcbm, got {args.base!r}")
    try:
        return LimitSpec(
            omega=args.omega, gamma_exp=args.gamma, c=args.c, a=args.a, base=base
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_limits(args) -> int:
    try:
        grid = [float(v) for v in args.grid.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"--grid must be comma-separated numbers: {exc}") from exc
    if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError(f"--grid must be strictly increasing, got {args.grid!r}")
    if grid[0] < 0 or grid[-1] > 1:
        raise ConfigError(f"--grid points must lie in [0, 1], got {args.grid!r}")
    if args.levels < 1:
        raise ConfigError(f"--levels must be >= 1, got {args.levels}")
    spec = _spec_from_args(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cov, labels = assemble_covariance(spec, np.asarray(grid), args.levels)
    files = [out_dir / "covariance.csv"]
    write_covariance_csv(files[0], labels, cov)
    if args.paths:
        rng = np.random.default_rng(args.seed or 0)
        curves = sample_limit_paths(spec, np.asarray(grid), args.levels, args.paths, rng)
        p = out_dir / "paths.csv"
        write_paths_csv(p, curves)
        files.append(p)
    if args.format == "json":
        files += _json_mirror(out_dir, files)
    _write_manifest(out_dir, "limits", args.seed, None, files)
    print(f"limits: wrote {len(files)} files to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nestbox",
        description="nested occupancy scheme simulation and verification",
    )
    parser.add_argument("--version", action="version", version=f"nestbox {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, default=None, help="master seed override")
    common.add_argument(
        "--threads", type=int, default=_default_threads(),
        help="worker cap (default from NESTBOX_THREADS; output is identical regardless)",
    )
    common.add_argument(
        "--format", choices=("csv", "json"), default="csv",
        help="csv only, or csv plus json mirrors",
    )

    p_sim = sub.add_parser("simulate", parents=[common], help="write occupancy CSVs")
    p_sim.add_argument("--config", required=True)
    p_sim.set_defaults(func=cmd_simulate)

    p_ver = sub.add_parser("verify", parents=[common], help="run a verification experiment")
    p_ver.add_argument("--config", required=True)
    p_ver.set_defaults(func=cmd_verify)

    p_lim = sub.add_parser("limits", parents=[common], help="limit covariances and paths")
    p_lim.add_argument("--omega", type=float, default=1.0)
    p_lim.add_argument("--gamma", type=float, default=0.5)
    p_lim.add_argument("--c", type=float, default=1.0)
    p_lim.add_argument("--a", type=float, default=1.0)
    p_lim.add_argument("--base", default="bm", help="bm | rl | tcbm")
    p_lim.add_argument("--q", type=float, default=1.0)
    p_lim.add_argument("--grid", required=True, help="comma-separated grid, e.g. 0.5,1.0")
    p_lim.add_argument("--levels", type=int, required=True)
    p_lim.add_argument("--paths", type=int, default=0, help="also sample this many limit paths")
    p_lim.set_defaults(func=cmd_limits)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, matching the exit-code table
        return int(exc.code) if exc.code else EXIT_OK
    _write_manifest.started = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    try:
        return args.func(args)
    except (ConfigError, NoLimitTheoremError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except NestboxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERDICT


if __name__ == "__main__":
    sys.exit(main())
