"""Command-line entry point.

Subcommands: run, ensemble, table, gridsearch, oracle-check.  Each one
reads a YAML config, executes, and writes records to --out as CSV or JSON
lines.  Output is byte-identical for identical config and seed; the master
seed defaults to 0 so reproducibility is the default.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from dataclasses import dataclass
from typing import Optional, Sequence

from . import bench
from .bench import ErrorCurve, GridSearchResult, OutlierTable
from .config import (
    ConfigError,
    GridSearchConfig,
    OracleCheckConfig,
    ParseError,
    TableConfig,
    ValidationError,
    load_config,
)
from .experiment import (
    RunAborted,
    RunResult,
    derive_rng,
    run_single,
    run_with_outlier_correction,
    sample_true_state,
)
from .gridbayes import GridPosterior
from .model import PhasePoint, simulate_shot
from .smc import bayes_update, init_uniform_disk_prior, maybe_resample, _moments_blas

__all__ = ["CliConfig", "OracleReport", "emit_results", "oracle_check", "main"]

ORACLE_TOLERANCE = 0.05
SUBCOMMANDS = ("run", "ensemble", "table", "gridsearch", "oracle-check")


@dataclass(frozen=True)
class CliConfig:
    subcommand: str
    config_path: str
    output_path: Optional[str]
    seed_override: Optional[int] = None
    format: str = "csv"
    parallelism_override: Optional[int] = None


@dataclass(frozen=True)
class OracleReport:
    """Filter-versus-grid posterior-mean discrepancy on one shot sequence."""

    discrepancy: float
    tolerance: float
    passed: bool
    shots: int
    smc_mean: PhasePoint
    grid_mean: PhasePoint


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".9g")
    return str(value)


def _json_value(value):
    if isinstance(value, float):
        if math.isinf(value) or math.isnan(value):
            return str(value)
        return float(format(value, ".9g"))
    return value


def _records(results) -> tuple[list[str], list[dict]]:
    """Flatten any result object into (column names, record dicts)."""
    if isinstance(results, ErrorCurve):
        results = [results]
    if isinstance(results, list) and all(isinstance(r, ErrorCurve) for r in results):
        rows = [
            {"policy_label": c.policy_label, "shot_count": s, "median_error": m}
            for c in results
            for s, m in c.points
        ]
        return ["policy_label", "shot_count", "median_error"], rows
    if isinstance(results, OutlierTable):
        rows = [
            {
                "epsilon_sq": eps,
                "checkpoint": checkpoint,
                "count_per_10k": results.counts[i][j],
                "n_samples": results.n_samples,
            }
            for i, eps in enumerate(results.thresholds)
            for j, checkpoint in enumerate(results.shot_checkpoints)
        ]
        return ["epsilon_sq", "checkpoint", "count_per_10k", "n_samples"], rows
    if isinstance(results, RunResult):
        rows = [
            {"shot_count": s, "normalized_sq_error": e} for s, e in results.error_trace
        ]
        return ["shot_count", "normalized_sq_error"], rows
    if isinstance(results, GridSearchResult):
        rows = [
            {
                "a_policy": a,
                "b_policy": b,
                "median_error_at_budget": m,
                "is_best": (a, b) == results.best,
            }
            for a, b, m in results.grid
        ]
        return ["a_policy", "b_policy", "median_error_at_budget", "is_best"], rows
    if isinstance(results, OracleReport):
        rows = [
            {
                "discrepancy": results.discrepancy,
                "tolerance": results.tolerance,
                "passed": results.passed,
                "shots": results.shots,
            }
        ]
        return ["discrepancy", "tolerance", "passed", "shots"], rows
    raise TypeError(f"cannot emit results of type {type(results).__name__}")


def emit_results(results, fmt: str, path: str) -> None:
    """Write records to path; CSV gets a header row, JSON lines get one
    object per record.  Reals carry 9 significant digits and the bytes are
    identical for identical inputs."""
    columns, rows = _records(results)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        if fmt == "csv":
            handle.write(",".join(columns) + "\n")
            for row in rows:
                handle.write(",".join(_fmt(row[c]) for c in columns) + "\n")
        elif fmt == "jsonl":
            for row in rows:
                obj = {c: _json_value(row[c]) for c in columns}
                handle.write(json.dumps(obj, sort_keys=False) + "\n")
        else:
            raise ValueError(f"unknown output format {fmt!r}")


def oracle_check(cfg: OracleCheckConfig) -> OracleReport:
    """Run the particle filter and the dense-grid exact posterior on one
    random shot sequence and compare their means.

    Settings are drawn uniformly from the prior disk; outcomes come from a
    simulated detector at a hidden true state.  Passing means the means
    agree within 0.05 phase-space units.
    """
    rng = derive_rng(cfg.seed)
    true_state = sample_true_state(cfg.radius_r0, rng)
    cloud = init_uniform_disk_prior(cfg.n_particles, cfg.radius_r0, rng)
    grid = GridPosterior(cfg.radius_r0, cfg.grid_points)
    for _ in range(cfg.shots):
        beta = sample_true_state(cfg.radius_r0, rng)
        outcome = simulate_shot(true_state, beta, cfg.noise, rng)
        cloud = bayes_update(cloud, outcome, beta, cfg.noise)
        cloud = maybe_resample(cloud, cfg.resample, rng)
        grid.update(outcome, beta, cfg.noise)
    smc_mean = _moments_blas(cloud).mean
    grid_mean = grid.mean()
    discrepancy = abs(smc_mean - grid_mean)
    return OracleReport(
        discrepancy=discrepancy,
        tolerance=ORACLE_TOLERANCE,
        passed=discrepancy < ORACLE_TOLERANCE,
        shots=cfg.shots,
        smc_mean=smc_mean,
        grid_mean=grid_mean,
    )


def _parse_args(argv: Optional[Sequence[str]]) -> CliConfig:
    parser = argparse.ArgumentParser(
        prog="coherentid",
        description="Adaptive Bayesian identification of a coherent state "
        "with a simulated vacuum detector",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, needs_out in [
        ("run", True),
        ("ensemble", True),
        ("table", True),
        ("gridsearch", True),
        ("oracle-check", False),
    ]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the YAML config")
        p.add_argument("--out", required=needs_out, help="output file path")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
        p.add_argument("--parallelism", type=int, default=None, help="worker processes")
    ns = parser.parse_args(argv)
    return CliConfig(
        subcommand=ns.subcommand,
        config_path=ns.config,
        output_path=ns.out,
        seed_override=ns.seed,
        format=ns.format,
        parallelism_override=ns.parallelism,
    )


def _apply_overrides(cli: CliConfig, cfg):
    if cli.seed_override is not None:
        if isinstance(cfg, OracleCheckConfig):
            cfg = dataclasses.replace(cfg, seed=cli.seed_override)
        elif hasattr(cfg, "base"):
            cfg = dataclasses.replace(
                cfg, base=dataclasses.replace(cfg.base, seed=cli.seed_override)
            )
        elif hasattr(cfg, "ensemble"):
            base = dataclasses.replace(cfg.ensemble.base, seed=cli.seed_override)
            cfg = dataclasses.replace(
                cfg, ensemble=dataclasses.replace(cfg.ensemble, base=base)
            )
        else:
            cfg = dataclasses.replace(cfg, seed=cli.seed_override)
    if cli.parallelism_override is not None:
        if hasattr(cfg, "parallelism") and hasattr(cfg, "base"):
            cfg = dataclasses.replace(cfg, parallelism=cli.parallelism_override)
        elif hasattr(cfg, "ensemble"):
            cfg = dataclasses.replace(
                cfg,
                ensemble=dataclasses.replace(
                    cfg.ensemble, parallelism=cli.parallelism_override
                ),
            )
    return cfg


def _execute(cli: CliConfig) -> int:
    if cli.subcommand == "run":
        cfg = _apply_overrides(cli, load_config(cli.config_path, "run"))
        runner = run_with_outlier_correction if cfg.outlier_correction else run_single
        result = runner(cfg)
        emit_results(result, cli.format, cli.output_path)
        print(
            f"estimate=({_fmt(result.estimate.re)}, {_fmt(result.estimate.im)}) "
            f"true=({_fmt(result.true_state.re)}, {_fmt(result.true_state.im)}) "
            f"shots={result.total_shots_used} restarts={result.restarts} "
            f"converged={result.converged}"
        )
        return 0
    if cli.subcommand == "ensemble":
        cfg = _apply_overrides(cli, load_config(cli.config_path, "ensemble"))
        curves = bench.run_ensemble(cfg)
        emit_results(curves, cli.format, cli.output_path)
        print(f"wrote {len(curves)} curve(s) to {cli.output_path}")
        return 0
    if cli.subcommand == "table":
        cfg = _apply_overrides(cli, load_config(cli.config_path, "table"))
        table = bench.outlier_table(cfg.ensemble, cfg.thresholds, cfg.checkpoints)
        emit_results(table, cli.format, cli.output_path)
        print(f"wrote outlier table ({cfg.ensemble.n_samples} samples) to {cli.output_path}")
        return 0
    if cli.subcommand == "gridsearch":
        cfg = _apply_overrides(cli, load_config(cli.config_path, "gridsearch"))
        result = bench.grid_search(
            cfg.ensemble, cfg.a_values, cfg.b_values, cfg.budget_shots
        )
        emit_results(result, cli.format, cli.output_path)
        print(f"best (a, b) = {result.best}")
        return 0
    if cli.subcommand == "oracle-check":
        cfg = _apply_overrides(cli, load_config(cli.config_path, "oracle-check"))
        report = oracle_check(cfg)
        if cli.output_path:
            emit_results(report, cli.format, cli.output_path)
        verdict = "PASS" if report.passed else "FAIL"
        print(
            f"{verdict}: discrepancy {_fmt(report.discrepancy)} "
            f"(tolerance {_fmt(report.tolerance)}) over {report.shots} shots"
        )
        return 0
    raise AssertionError(f"unhandled subcommand {cli.subcommand}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    cli = _parse_args(argv)
    try:
        return _execute(cli)
    except (ParseError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RunAborted as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
