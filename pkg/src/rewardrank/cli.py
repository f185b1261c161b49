"""Command-line experiment runner.

Exit codes: 0 all checks pass, 1 some check failed, 2 bad configuration,
3 output path not writable, 4 calibration refused or failed.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .calibration import calibrate, load_constants
from .errors import CalibrationError, ConfigurationError, RewardRankError
from .experiments import DEFAULT_PARAMS, EXPERIMENTS, REPORT_SCHEMA_VERSION, CellResult, Check
from .spectra import SPECTRUM_CSV_COLUMNS

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_UNWRITABLE, EXIT_CALIBRATION = 0, 1, 2, 3, 4


@dataclass
class ExperimentConfig:
    experiment: str
    sizes: list[int]
    seeds: list[int]
    output_dir: Path
    format: str = "json"
    tolerances: dict[str, Any] = field(default_factory=dict)
    constants_path: str | None = None
    constant_overrides: dict[str, float] = field(default_factory=dict)
    jobs: int = 1

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(
                f"unknown experiment {self.experiment!r}; choose from {sorted(EXPERIMENTS)}")
        if not self.sizes:
            raise ConfigurationError("at least one size is required")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        if any(n < 2 for n in self.sizes):
            raise ConfigurationError("sizes must be >= 2")
        if self.format not in ("json", "csv"):
            raise ConfigurationError(f"unknown format {self.format!r}")
        unknown = set(self.tolerances) - set(DEFAULT_PARAMS)
        if unknown:
            raise ConfigurationError(f"unknown tolerance keys: {sorted(unknown)}")
        if self.jobs < 1:
            raise ConfigurationError("jobs must be >= 1")

    @property
    def params(self) -> dict[str, Any]:
        return {**DEFAULT_PARAMS, **self.tolerances}


def parse_int_list(text: str) -> list[int]:
    """``"1,2,5-8"`` -> ``[1, 2, 5, 6, 7, 8]``; ranges are inclusive."""
    out: list[int] = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        lo, sep, hi = part.partition("-")
        try:
            if sep and lo:
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise ConfigurationError(f"cannot parse integer list item {part!r}") from None
    return out


def _as_int_list(value) -> list[int]:
    if isinstance(value, str):
        return parse_int_list(value)
    if isinstance(value, int):
        return [value]
    return [int(v) for v in value]


def load_config_file(path: str | Path) -> dict[str, Any]:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigurationError("config file must hold a JSON object")
    return data


def _parse_override(text: str) -> tuple[str, Any]:
    key, sep, val = text.partition("=")
    if not sep:
        raise ConfigurationError(f"override {text!r} must look like key=value")
    try:
        return key.strip(), json.loads(val)
    except json.JSONDecodeError:
        raise ConfigurationError(f"override {text!r}: value is not JSON") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rewardrank", description=__doc__.splitlines()[0],
                                epilog="Exit codes: 0 pass, 1 check failed, 2 config error, "
                                       "3 unwritable output, 4 calibration error.")
    p.add_argument("--config", help="JSON config file; command-line flags override it")
    p.add_argument("--experiment", choices=sorted(EXPERIMENTS))
    p.add_argument("--sizes", help="comma list or inclusive ranges, e.g. 400,900")
    p.add_argument("--seeds", help="comma list or inclusive ranges, e.g. 0-4")
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=("json", "csv"))
    p.add_argument("--tol", action="append", default=[], metavar="KEY=VALUE",
                   help="override an experiment parameter (JSON value)")
    p.add_argument("--constant", action="append", default=[], metavar="NAME=VALUE",
                   help="override a frozen constant, e.g. K_W=0.1")
    p.add_argument("--constants", help="constants file (default: bundled)")
    p.add_argument("--jobs", type=int, help="worker threads across cells")
    p.add_argument("--calibrate", action="store_true",
                   help="measure constants and write them to --constants")
    p.add_argument("--overwrite-constants", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    data = load_config_file(args.config) if args.config else {}
    tolerances = dict(data.get("tolerances", {}))
    tolerances.update(dict(_parse_override(t) for t in args.tol))
    overrides = {k: float(v) for k, v in data.get("constant_overrides", {}).items()}
    overrides.update({k: float(v) for k, v in map(_parse_override, args.constant)})
    pick = lambda flag, key, default=None: flag if flag is not None else data.get(key, default)
    sizes = args.sizes if args.sizes is not None else data.get("sizes", [])
    seeds = args.seeds if args.seeds is not None else data.get("seeds", [])
    experiment = pick(args.experiment, "experiment", "calibration" if args.calibrate else None)
    if experiment is None:
        raise ConfigurationError("no experiment given (--experiment or config 'experiment')")
    out = pick(args.out, "output_dir", "rewardrank-out")
    return ExperimentConfig(
        experiment=experiment,
        sizes=_as_int_list(sizes),
        seeds=_as_int_list(seeds),
        output_dir=Path(out),
        format=pick(args.format, "format", "json"),
        tolerances=tolerances,
        constants_path=pick(args.constants, "constants"),
        constant_overrides=overrides,
        jobs=int(pick(args.jobs, "jobs", 1)),
    )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _write_cell(cell: CellResult, out: Path, fmt: str) -> Path:
    stem = f"{cell.experiment}_n{cell.size}_s{cell.seed}"
    if fmt == "json":
        path = out / f"{stem}.json"
        path.write_text(_dump(cell.to_dict()))
        return path
    path = out / f"{stem}.csv"
    with open(path, "w", newline="") as fh:
        if cell.rows:
            w = csv.DictWriter(fh, fieldnames=SPECTRUM_CSV_COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows(cell.rows)
        else:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["check", "passed", "observed", "bound"])
            for c in cell.checks:
                w.writerow([c.name, c.passed, json.dumps(_jsonable(c.observed), sort_keys=True),
                            json.dumps(_jsonable(c.bound))])
    return path


def _ensure_writable(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".rewardrank-write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise PermissionError(f"cannot write to {out}: {exc}") from exc


def run(config: ExperimentConfig) -> tuple[int, dict]:
    """Evaluate every cell, write reports and ``summary.json``; return (exit code, summary)."""
    config.validate()
    _ensure_writable(config.output_dir)
    consts = load_constants(config.constants_path).with_overrides(config.constant_overrides)
    exp = EXPERIMENTS[config.experiment]
    params = config.params
    cells_in = [(n, s) for n in config.sizes for s in config.seeds]

    def one(cell):
        return exp.cell(cell[0], cell[1], params, consts)

    if config.jobs > 1:
        with ThreadPoolExecutor(config.jobs) as pool:
            results = list(pool.map(one, cells_in))
    else:
        results = [one(c) for c in cells_in]
    # single writer so file contents do not depend on scheduling
    files = [_write_cell(r, config.output_dir, config.format).name for r in results]
    agg: list[Check] = exp.aggregate(results, params, consts)
    failed = [f"{r.experiment}_n{r.size}_s{r.seed}:{c.name}"
              for r in results for c in r.checks if not c.passed]
    failed += [f"aggregate:{c.name}" for c in agg if not c.passed]
    summary = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "experiment": config.experiment,
        "sizes": config.sizes,
        "seeds": config.seeds,
        "format": config.format,
        "parameters": params,
        "constants": consts.values,
        "cells": [{"size": r.size, "seed": r.seed, "passed": r.passed, "file": f,
                   "checks": {c.name: c.passed for c in r.checks},
                   **_cell_headline(r)} for r, f in zip(results, files)],
        "aggregate_checks": [c.to_dict() for c in agg],
        "failed": failed,
        "passed": not failed,
    }
    (config.output_dir / "summary.json").write_text(_dump(summary))
    return (EXIT_OK if not failed else EXIT_FAILED), summary


def _cell_headline(r: CellResult) -> dict:
    keys = ("zero_count", "rank_estimate", "max_dev_from_one", "ks_distance",
            "max_scaled_deviation", "min_target_match", "max_return_gap")
    return {k: r.report[k] for k in keys if k in r.report}


def run_calibration(config: ExperimentConfig, overwrite: bool) -> int:
    if not config.constants_path:
        raise ConfigurationError("--calibrate needs --constants <path> for the output file")
    if not config.sizes:
        raise ConfigurationError("at least one size is required")
    consts = calibrate(config.sizes, config.seeds, config.constants_path, overwrite=overwrite,
                       local_law_sizes=[min(config.sizes)],
                       progress=lambda msg: print(msg, file=sys.stderr))
    print(_dump(consts.to_dict()), end="")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = config_from_args(args)
        if args.calibrate:
            return run_calibration(config, args.overwrite_constants)
        code, summary = run(config)
    except CalibrationError as exc:
        print(f"calibration error: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except PermissionError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_UNWRITABLE
    except (ConfigurationError, RewardRankError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    status = "PASS" if code == EXIT_OK else "FAIL"
    print(f"{status} {config.experiment}: {len(summary['cells'])} cells, "
          f"{len(summary['failed'])} failed checks -> {config.output_dir / 'summary.json'}")
    for name in summary["failed"]:
        print(f"  failed: {name}")
    return code


if __name__ == "__main__":
    sys.exit(main())
