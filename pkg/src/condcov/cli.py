"""Command-line front end: ``condcov {estimate,band,simulate,coverage,replay}``.

Every run writes ``manifest.json`` holding the fully resolved configuration.
Products are written to a staging directory and moved into the output
directory only when the run succeeds; a failed run leaves the manifest and
``error.log`` only.  Exit codes: 0 success, 1 invalid input or usage,
2 estimation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend_name
from ._rng import substream
from .bootstrap import BootstrapConfig, bootstrap_bands, default_workers
from .data import ConfidenceBand, EvaluationGrid
from .errors import CondCovError, EstimationError, IoFailure, ValidationError
from .estimation import KERNEL_FAMILIES, MEAN_METHODS, EstimatorConfig, KernelSpec, covariance_to_correlation, select_bandwidth_cv
from .export import export_field
from .ingest import TIME_FORMATS, ColumnMap, fill_missing_linear, load_dataset, write_series_csv
from .plotting import render_band_plot
from .simulation import SCENARIOS, StudyDesign, TemperatureModel, run_coverage_study, scenario_functions, simulate_dataset

logger = logging.getLogger("condcov")

OUTPUT_DIR_ENV = "CONDCOV_OUTPUT_DIR"
MANIFEST = "manifest.json"
ERROR_LOG = "error.log"
SUBCOMMANDS = ("estimate", "band", "simulate", "coverage")


class UsageError(Exception):
    """Bad flag value; the message names the flag."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _names(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _span(text: str):
    return text if text in ("day", "week") else int(text)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--output-dir", help=f"default: ${OUTPUT_DIR_ENV} or the current directory")
    p.add_argument("--config", help="key=value file; flags given on the command line win")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, help="threads (default: available CPUs); results do not depend on it")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_input(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", help="CSV file with a header row")
    p.add_argument("--time-col", default="time")
    p.add_argument("--confounder-col", default="temperature")
    p.add_argument("--outputs", type=_names, help="comma-separated output column names")
    p.add_argument("--time-format", choices=TIME_FORMATS, default="iso")


def _add_estimator(p: argparse.ArgumentParser, default_h: float | None) -> None:
    p.add_argument("--kernel", choices=tuple(KERNEL_FAMILIES), default="gaussian")
    p.add_argument("--bandwidth", type=float, default=default_h)
    p.add_argument("--cv-candidates", type=_floats, help="choose the bandwidth by cross-validation among these")
    p.add_argument("--cv-folds", type=int, default=5)
    p.add_argument("--mean-method", choices=MEAN_METHODS, default="local-linear")
    p.add_argument("--mean-bandwidth", type=float)
    p.add_argument("--mean-grid", type=int, help="evaluate the mean on this many points and interpolate")
    p.add_argument("--grid", type=int, default=100, help="number of grid points G")
    p.add_argument("--grid-min", type=float)
    p.add_argument("--grid-max", type=float)


def _add_boot(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=("disjoint", "moving"), default="disjoint")
    p.add_argument("--span", type=_span, default="day", help="'day', 'week' or a row count")
    p.add_argument("--replicates", type=int, default=100)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="condcov", description="Kernel conditional covariance with block-bootstrap bands.")
    parser.add_argument("--version", action="version", version=f"condcov {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("estimate", help="conditional covariance field of a CSV dataset")
    _add_common(p)
    _add_input(p)
    _add_estimator(p, None)
    p.add_argument("--correlation", action="store_true", help="also export the correlation field")
    p.add_argument("--plot", action="store_true", help="write an SVG of the off-diagonal entries")

    p = sub.add_parser("band", help="estimate plus pointwise bootstrap bands")
    _add_common(p)
    _add_input(p)
    _add_estimator(p, None)
    _add_boot(p)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--band-method", choices=("normal", "percentile"), default="normal")
    p.add_argument("--correlation", action="store_true", help="also build correlation bands")
    p.add_argument("--plot", action="store_true")

    p = sub.add_parser("simulate", help="write a synthetic dataset CSV")
    _add_common(p)
    p.add_argument("--scenario", choices=SCENARIOS, default="A")
    p.add_argument("--days", type=int, default=365)
    p.add_argument("--samples-per-day", type=int, default=24)
    p.add_argument("--start-day", type=int, default=1)

    p = sub.add_parser("coverage", help="Monte Carlo coverage study on a synthetic scenario")
    _add_common(p)
    _add_estimator(p, 1.5)
    p.add_argument("--scenario", choices=SCENARIOS, default="A")
    p.add_argument("--datasets", type=int, default=100)
    p.add_argument("--days", type=int, default=365)
    p.add_argument("--samples-per-day", type=int, default=24)
    p.add_argument("--start-day", type=int, default=1)
    p.add_argument("--modes", type=_names, default=["disjoint", "moving"])
    p.add_argument("--levels", type=_floats, default=[0.95, 0.99])
    p.add_argument("--span", type=_span, default="day")
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--truth", choices=("scenario", "estimate"), default="scenario")

    p = sub.add_parser("replay", help="rerun the configuration recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--output-dir")
    p.add_argument("--workers", type=int)
    return parser


# -- configuration ----------------------------------------------------------

def _read_config(path: str) -> dict[str, str]:
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"--config: cannot read {path}: {exc}")
    for i, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"--config: line {i} is not key=value: {line!r}")
        out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if name in action.choices:
            return action.choices[name]
    raise UsageError(f"unknown subcommand {name!r}")


def _coerce_defaults(sub: argparse.ArgumentParser, raw: dict, source: str) -> dict:
    """Map config keys to parser defaults, converting with each flag's type."""
    actions = {a.dest: a for a in sub._actions}
    out = {}
    for key, value in raw.items():
        if key not in actions or key in ("help", "config"):
            raise UsageError(f"{source}: unknown key {key!r}")
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            out[key] = value if isinstance(value, bool) else value.lower() in ("1", "true", "yes", "on")
        elif isinstance(value, str) and action.type is not None:
            try:
                out[key] = action.type(value)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"--{key.replace('_', '-')}: {exc}")
        else:
            out[key] = value
    return out


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a subcommand is required: " + ", ".join(SUBCOMMANDS + ("replay",)))
    if args.command == "replay":
        return args
    if args.config:
        sub = _subparser(parser, args.command)
        sub.set_defaults(**_coerce_defaults(sub, _read_config(args.config), "--config"))
        args = parser.parse_args(argv)
    return args


def _check(cond: bool, flag: str, message: str) -> None:
    if not cond:
        raise UsageError(f"{flag}: {message}")


def validate(args: argparse.Namespace) -> None:
    """Range checks that argparse cannot express.  Messages name the flag."""
    _check(0 <= args.seed < 2**64, "--seed", "must lie in [0, 2^64)")
    _check(args.workers is None or args.workers >= 1, "--workers", "must be >= 1")
    if args.command in ("estimate", "band", "coverage"):
        _check(args.bandwidth is None or args.bandwidth > 0, "--bandwidth", f"must be positive, got {args.bandwidth}")
        if args.command != "coverage":
            _check(args.bandwidth is not None or args.cv_candidates, "--bandwidth", "give --bandwidth or --cv-candidates")
        _check(not args.cv_candidates or min(args.cv_candidates) > 0, "--cv-candidates", "values must be positive")
        _check(args.mean_bandwidth is None or args.mean_bandwidth > 0, "--mean-bandwidth", "must be positive")
        _check(args.mean_grid is None or args.mean_grid >= 2, "--mean-grid", "must be >= 2")
        _check(args.grid >= 1, "--grid", "must be >= 1")
        if args.grid_min is not None and args.grid_max is not None:
            _check(args.grid_min < args.grid_max, "--grid-min", "must be below --grid-max")
    if args.command in ("estimate", "band"):
        _check(bool(args.input), "--input", "is required")
        _check(Path(args.input).is_file(), "--input", f"file not found: {args.input}")
        _check(bool(args.outputs), "--outputs", "is required (comma-separated column names)")
    if args.command in ("band", "coverage"):
        _check(args.replicates >= 2, "--replicates", "must be >= 2")
        _check(not isinstance(args.span, int) or args.span >= 1, "--span", "must be >= 1")
    if args.command == "band":
        _check(0 < args.alpha < 1, "--alpha", "must lie in (0, 1)")
    if args.command in ("simulate", "coverage"):
        _check(args.days >= 1, "--days", "must be >= 1")
        _check(args.samples_per_day >= 1, "--samples-per-day", "must be >= 1")
        _check(1 <= args.start_day <= 365, "--start-day", "must lie in 1..365")
    if args.command == "coverage":
        _check(args.datasets >= 1, "--datasets", "must be >= 1")
        _check(bool(args.modes) and set(args.modes) <= {"disjoint", "moving"}, "--modes", "use disjoint and/or moving")
        _check(bool(args.levels) and all(0 < lv < 1 for lv in args.levels), "--levels", "must lie in (0, 1)")


_NOT_RECORDED = ("config", "verbose", "output_dir", "command")


def resolved_config(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_RECORDED}


# -- subcommands ------------------------------------------------------------

def _load(args) -> tuple:
    columns = ColumnMap(args.time_col, args.confounder_col, tuple(args.outputs))
    series = load_dataset(args.input, columns, args.time_format)
    filled = int(series.missing_mask.sum() + series.confounder_missing.sum()) if series.has_missing else 0
    if series.has_missing:
        series = fill_missing_linear(series)
    return series, {"rows": series.n, "outputs": list(series.output_names), "filled_cells": filled}


def _grid(args, z) -> EvaluationGrid:
    return EvaluationGrid.spanning(z, args.grid, args.grid_min, args.grid_max)


def _estimator(args, series, info: dict) -> EstimatorConfig:
    h = args.bandwidth
    if h is None:
        sel = select_bandwidth_cv(series, args.cv_candidates, args.mean_method, args.cv_folds, args.kernel)
        h = sel.bandwidth
        info["cv_scores"] = {repr(k): v for k, v in sel.scores.items()}
    info["bandwidth"] = h
    return EstimatorConfig(KernelSpec(args.kernel, h), args.mean_method, args.mean_bandwidth, args.mean_grid)


def _meta(args, est: EstimatorConfig) -> dict:
    return {"h": est.kernel.bandwidth, "kernel": est.kernel.family, "mean_method": est.mean_method, "seed": args.seed}


def run_estimate(args, stage: Path, info: dict) -> None:
    series, info["data"] = _load(args)
    est = _estimator(args, series, info)
    grid = _grid(args, series.confounder)
    _, cov = est.fit(series, grid)
    meta = _meta(args, est)
    export_field(cov, stage / "covariance.csv")
    export_field(cov, stage / "covariance.json", "structured", meta)
    if args.correlation or args.plot:
        corr = covariance_to_correlation(cov)
        if args.correlation:
            export_field(corr, stage / "correlation.csv")
            export_field(corr, stage / "correlation.json", "structured", meta)
        if args.plot:
            # no interval here: a zero-width band draws as the bare curve
            zero = np.zeros_like(corr.matrices)
            flat = ConfidenceBand(grid, corr.matrices, zero, corr.matrices, corr.matrices, 0.05, 1, kind="correlation")
            render_band_plot(flat, stage / "correlation.svg", names=series.output_names, xlabel=series.confounder_name)


def run_band(args, stage: Path, info: dict) -> None:
    series, info["data"] = _load(args)
    est = _estimator(args, series, info)
    grid = _grid(args, series.confounder)
    boot = BootstrapConfig(args.mode, args.span, args.replicates, args.alpha, args.seed, args.band_method)
    res = bootstrap_bands(series, est, boot, grid, correlation=args.correlation, workers=args.workers)
    info["blocks"] = res.plan.m
    info["replicate_failures"] = len(res.ensemble.failures)
    meta = dict(_meta(args, est), kappa=args.replicates, alpha=args.alpha, mode=args.mode, span=args.span)
    export_field(res.covariance_band, stage / "covariance_band.csv")
    export_field(res.covariance_band, stage / "covariance_band.json", "structured", meta)
    if res.correlation_band is not None:
        export_field(res.correlation_band, stage / "correlation_band.csv")
        export_field(res.correlation_band, stage / "correlation_band.json", "structured", meta)
    if args.plot:
        band = res.correlation_band or res.covariance_band
        render_band_plot(band, stage / f"{band.kind}_band.svg", names=series.output_names, xlabel=series.confounder_name)


def run_simulate(args, stage: Path, info: dict) -> None:
    spec = scenario_functions(args.scenario)
    series = simulate_dataset(spec, TemperatureModel(), args.days, args.samples_per_day, substream(args.seed, 1, 0), args.start_day)
    info["rows"] = series.n
    write_series_csv(series, stage / "dataset.csv", time_format="epoch")


def run_coverage(args, stage: Path, info: dict) -> None:
    spec = scenario_functions(args.scenario)
    est = EstimatorConfig(KernelSpec(args.kernel, args.bandwidth), args.mean_method, args.mean_bandwidth, args.mean_grid)
    design = StudyDesign(
        args.days, args.samples_per_day, args.start_day, args.grid, args.replicates, args.span, tuple(args.levels), tuple(args.modes)
    )
    grid = None
    if args.grid_min is not None and args.grid_max is not None:
        grid = EvaluationGrid(np.linspace(args.grid_min, args.grid_max, args.grid))
    report = run_coverage_study(spec, estimator=est, design=design, datasets=args.datasets, seed=args.seed, workers=args.workers, truth=args.truth, grid=grid)
    info["datasets_ok"] = report.datasets_ok
    info["dataset_failures"] = report.n_fail
    (stage / "coverage.csv").write_text(report.to_csv(), encoding="utf-8")
    summary = {"metadata": report.metadata, "average_coverage": report.summary(), "failures": report.failures}
    (stage / "coverage_summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8")


RUNNERS = {"estimate": run_estimate, "band": run_band, "simulate": run_simulate, "coverage": run_coverage}


# -- orchestration ----------------------------------------------------------

def _write_manifest(out: Path, args, status: str, info: dict, outputs: list[str], error: str | None = None) -> None:
    doc = {
        "software_version": __version__,
        "command": args.command,
        "config": resolved_config(args),
        "status": status,
        "backend": backend_name(),
        "workers_used": args.workers or default_workers(),
        "outputs": outputs,
        "run": info,
    }
    if error is not None:
        doc["error"] = error
    (out / MANIFEST).write_text(json.dumps(doc, indent=1, sort_keys=True, default=str) + "\n", encoding="utf-8")


def _output_dir(args) -> Path:
    return Path(args.output_dir or os.environ.get(OUTPUT_DIR_ENV) or ".")


def execute(args: argparse.Namespace) -> int:
    out = _output_dir(args)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"condcov: --output-dir: cannot create {out}: {exc}", file=sys.stderr)
        return 1
    stale = [out / ERROR_LOG]
    info: dict = {}
    stage = Path(tempfile.mkdtemp(prefix=".condcov-stage-", dir=out))
    code, error = 0, None
    try:
        validate(args)
        RUNNERS[args.command](args, stage, info)
    except UsageError as exc:
        code, error = 1, str(exc)
    except (ValidationError, IoFailure) as exc:
        code, error = 1, f"{type(exc).__name__}: {exc}"
    except (EstimationError, CondCovError) as exc:
        code, error = 2, f"{type(exc).__name__}: {exc}"
    except Exception as exc:  # unexpected: still leave a manifest and a log
        code, error = 2, f"{type(exc).__name__}: {exc}"
        logger.debug("unexpected failure", exc_info=True)
        error += "\n" + traceback.format_exc()
    if code == 0:
        names = sorted(p.name for p in stage.iterdir())
        for name in names:
            os.replace(stage / name, out / name)
        shutil.rmtree(stage, ignore_errors=True)
        for p in stale:
            p.unlink(missing_ok=True)
        _write_manifest(out, args, "ok", info, names)
        return 0
    shutil.rmtree(stage, ignore_errors=True)
    (out / ERROR_LOG).write_text(error.rstrip("\n") + "\n", encoding="utf-8")
    _write_manifest(out, args, "failed", info, [], error.splitlines()[0])
    print(f"condcov: error: {error.splitlines()[0]}", file=sys.stderr)
    return code


def _replay_args(args: argparse.Namespace) -> argparse.Namespace:
    try:
        doc = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        command, config = doc["command"], doc["config"]
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"manifest: cannot read {args.manifest}: {exc}")
    if doc.get("software_version") != __version__:
        logger.warning("manifest written by %s, running %s", doc.get("software_version"), __version__)
    parser = build_parser()
    sub = _subparser(parser, command)
    sub.set_defaults(**_coerce_defaults(sub, config, "manifest"))
    new = parser.parse_args([command])
    new.output_dir = args.output_dir
    if args.workers is not None:
        new.workers = args.workers
    return new


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        if args.command == "replay":
            args = _replay_args(args)
    except UsageError as exc:
        print(f"condcov: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return execute(args)


if __name__ == "__main__":
    sys.exit(main())
