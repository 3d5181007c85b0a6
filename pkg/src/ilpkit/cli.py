"""Batch experiment front end.

Commands:

* ``run-ilp``   — flow, derivative flow, covariance transport, and the
  per-horizon location-parameter series; writes ``ilp.csv``.
* ``run-mc``    — Monte Carlo mean/standard error of the SDE; writes ``mc.csv``.
* ``compare``   — joins the two and reports deviations and coverage;
  writes ``compare.csv`` plus both series files.
* ``validate``  — runs the cross-module invariant suite.

All outputs are deterministic functions of the configuration: CSV cells are
printed with 17 significant digits and reports carry no timestamps, so
repeated runs (at any ``ILP_THREADS``) are byte-identical.

Exit status: 0 success, 2 configuration error, 3 numeric failure,
4 validation failure.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path

import click
import numpy as np

from .config import ExperimentConfig, load_config, require_mc_reps
from .errors import ConfigError, IlpkitError
from .flow import FlowGrid, derivative_flow, integrate_flow
from .ilp import covariance_path, ilp_series
from .mc import MCSummary, RngPolicy, mc_mean
from .models import ModelBundle, build_bundle
from .validate import MUTATIONS, run_all_checks

__all__ = ["main", "execute_ilp", "execute_mc", "execute_compare", "execute_validate"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_VALIDATION = 4


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def _csv(header: list[str], rows: list[list[float]]) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _versions() -> str:
    import numpy
    import scipy

    try:
        own = metadata.version("ilpkit")
    except metadata.PackageNotFoundError:
        own = "unreleased"
    return "ilpkit %s, numpy %s, scipy %s" % (own, numpy.__version__, scipy.__version__)


def _resolve_x0(cfg: ExperimentConfig, bundle: ModelBundle) -> np.ndarray:
    if cfg.x0 is not None:
        x0 = np.asarray(cfg.x0, dtype=float)
        if x0.size != bundle.model.dim_p:
            raise ConfigError(
                "x0 has %d entries but the model dimension is %d" % (x0.size, bundle.model.dim_p),
                section="run",
                key="x0",
            )
        return x0
    if bundle.x0_sampler is not None:
        seed = cfg.x0_seed if cfg.x0_seed is not None else cfg.master_seed
        rng = RngPolicy(seed).named_stream(0)
        return np.asarray(bundle.x0_sampler(rng), dtype=float)
    if bundle.default_x0 is not None:
        return bundle.default_x0.copy()
    raise ConfigError("model has no default initial state; set x0", section="run", key="x0")


@dataclass(frozen=True)
class IlpArtifacts:
    grid: FlowGrid
    tangents: np.ndarray
    projected: np.ndarray
    csv_text: str
    report_text: str


@dataclass(frozen=True)
class McArtifacts:
    summary: MCSummary
    csv_text: str
    report_text: str


@dataclass(frozen=True)
class CompareArtifacts:
    times: np.ndarray
    ode: np.ndarray
    ilp: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    ilp_mad: np.ndarray
    ode_mad: np.ndarray
    coverage2: np.ndarray
    csv_text: str
    report_text: str
    ilp_csv: str
    mc_csv: str


def _report(cfg: ExperimentConfig, command: str, summary_lines: list[str]) -> str:
    lines = ["ilpkit run report", "=" * 17, "command: %s" % command]
    lines.extend(cfg.echo_lines())
    lines.append("versions: %s" % _versions())
    lines.append("")
    lines.extend(summary_lines)
    return "\n".join(lines) + "\n"


def _ilp_pipeline(cfg: ExperimentConfig, bundle: ModelBundle):
    x0 = _resolve_x0(cfg, bundle)
    grid = derivative_flow(bundle.vf, integrate_flow(bundle.vf, x0, cfg.delta, cfg.steps))
    sigma0 = cfg.sigma0_matrix(bundle.model.dim_p)
    cov = covariance_path(bundle.model, grid, sigma0)
    tangents, projected = ilp_series(
        bundle.model, grid, cov, vf=bundle.vf, curved_target=bundle.curved_target
    )
    return grid, tangents, projected


def execute_ilp(cfg: ExperimentConfig) -> IlpArtifacts:
    bundle = build_bundle(cfg.model_name, cfg.model_params)
    grid, tangents, projected = _ilp_pipeline(cfg, bundle)
    p = grid.dim
    header = (
        ["time"]
        + ["x%d" % i for i in range(p)]
        + ["m%d" % i for i in range(p)]
        + ["proj%d" % i for i in range(p)]
    )
    rows = [
        [grid.times[i], *grid.points[i], *tangents[i], *projected[i]]
        for i in range(len(grid.times))
    ]
    summary = [
        "rows: %d" % len(rows),
        "final tangent max-abs: %s" % _fmt(np.max(np.abs(tangents[-1]))),
    ]
    return IlpArtifacts(
        grid=grid,
        tangents=tangents,
        projected=projected,
        csv_text=_csv(header, rows),
        report_text=_report(cfg, "run-ilp", summary),
    )


def execute_mc(cfg: ExperimentConfig) -> McArtifacts:
    require_mc_reps(cfg)
    bundle = build_bundle(cfg.model_name, cfg.model_params)
    x0 = _resolve_x0(cfg, bundle)
    summary = mc_mean(
        bundle.model,
        x0,
        cfg.delta,
        cfg.steps,
        cfg.reps,
        RngPolicy(cfg.master_seed),
        constraint_projector=bundle.projector,
    )
    p = summary.mean.shape[1]
    header = ["time"] + ["mean%d" % i for i in range(p)] + ["stderr%d" % i for i in range(p)]
    rows = [
        [summary.times[i], *summary.mean[i], *summary.stderr[i]]
        for i in range(len(summary.times))
    ]
    lines = ["trajectories: %d" % summary.count]
    if bundle.exact_mean is not None:
        exact = bundle.exact_mean(cfg.delta, x0)
        gap = np.abs(summary.mean[-1] - exact)
        lines.append(
            "final |mean - exact| componentwise: %s" % " ".join(_fmt(v) for v in gap)
        )
    return McArtifacts(
        summary=summary,
        csv_text=_csv(header, rows),
        report_text=_report(cfg, "run-mc", lines),
    )


def execute_compare(cfg: ExperimentConfig) -> CompareArtifacts:
    require_mc_reps(cfg)
    bundle = build_bundle(cfg.model_name, cfg.model_params)
    ilp_art = execute_ilp(cfg)
    mc_art = execute_mc(cfg)
    mean = mc_art.summary.mean
    stderr = mc_art.summary.stderr
    ode = ilp_art.grid.points
    proj = ilp_art.projected
    ilp_dev = np.abs(proj - mean)
    ode_dev = np.abs(ode - mean)
    ilp_mad = ilp_dev.mean(axis=0)
    ode_mad = ode_dev.mean(axis=0)
    with np.errstate(invalid="ignore"):
        inside2 = ilp_dev <= 2.0 * stderr
    coverage2 = inside2.mean(axis=0)
    p = mean.shape[1]
    header = (
        ["time"]
        + ["ilp_dev%d" % i for i in range(p)]
        + ["ode_dev%d" % i for i in range(p)]
    )
    rows = [
        [ilp_art.grid.times[i], *ilp_dev[i], *ode_dev[i]] for i in range(len(ilp_art.grid.times))
    ]
    lines = ["per-component summary (mean absolute deviation from MC mean):"]
    for i in range(p):
        lines.append(
            "  component %d: ilp_mad=%s ode_mad=%s coverage_2se=%s"
            % (i, _fmt(ilp_mad[i]), _fmt(ode_mad[i]), _fmt(coverage2[i]))
        )
    lines.append("aggregate ilp_mad: %s" % _fmt(ilp_mad.mean()))
    lines.append("aggregate ode_mad: %s" % _fmt(ode_mad.mean()))
    return CompareArtifacts(
        times=ilp_art.grid.times,
        ode=ode,
        ilp=proj,
        mean=mean,
        stderr=stderr,
        ilp_mad=ilp_mad,
        ode_mad=ode_mad,
        coverage2=coverage2,
        csv_text=_csv(header, rows),
        report_text=_report(cfg, "compare", lines),
        ilp_csv=ilp_art.csv_text,
        mc_csv=mc_art.csv_text,
    )


def execute_validate(mutations=()) -> tuple[list, bool]:
    results = run_all_checks(mutations)
    return results, all(r.passed for r in results)


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return path


def _apply_overrides(cfg: ExperimentConfig, out, seed, reps, steps) -> ExperimentConfig:
    if out is not None:
        cfg.out_dir = Path(out)
    if seed is not None:
        cfg.master_seed = int(seed)
    if reps is not None:
        cfg.reps = int(reps)
    if steps is not None:
        cfg.steps = int(steps)
        if cfg.steps < 1:
            raise ConfigError("steps must be >= 1", section="run", key="steps")
    return cfg


_COMMON_OPTIONS = [
    click.option("--config", "config_path", required=True, type=click.Path(), help="Experiment config file."),
    click.option("--out", default=None, type=click.Path(), help="Output directory (overrides config)."),
    click.option("--seed", default=None, type=int, help="Master seed override."),
    click.option("--reps", default=None, type=int, help="Trajectory count override."),
    click.option("--steps", default=None, type=int, help="Grid step count override."),
]


def _with_common_options(fn):
    for option in reversed(_COMMON_OPTIONS):
        fn = option(fn)
    return fn


def _run_command(command: str, config_path, out, seed, reps, steps) -> int:
    try:
        cfg = _apply_overrides(load_config(config_path), out, seed, reps, steps)
        if command == "run-ilp":
            art = execute_ilp(cfg)
            _write(cfg.out_dir, "ilp.csv", art.csv_text)
            _write(cfg.out_dir, "report.txt", art.report_text)
        elif command == "run-mc":
            art = execute_mc(cfg)
            _write(cfg.out_dir, "mc.csv", art.csv_text)
            _write(cfg.out_dir, "report.txt", art.report_text)
        else:
            art = execute_compare(cfg)
            _write(cfg.out_dir, "ilp.csv", art.ilp_csv)
            _write(cfg.out_dir, "mc.csv", art.mc_csv)
            _write(cfg.out_dir, "compare.csv", art.csv_text)
            _write(cfg.out_dir, "report.txt", art.report_text)
    except ConfigError as exc:
        click.echo("config error: %s" % exc, err=True)
        return EXIT_CONFIG
    except IlpkitError as exc:
        click.echo("numeric failure: %s" % exc, err=True)
        return EXIT_NUMERIC
    click.echo("wrote %s" % cfg.out_dir)
    return EXIT_OK


@click.group()
def main():
    """Location-parameter experiments: deterministic pipeline vs Monte Carlo."""


@main.command("run-ilp")
@_with_common_options
def run_ilp_cmd(config_path, out, seed, reps, steps):
    """Compute the flow and per-horizon location parameters."""
    sys.exit(_run_command("run-ilp", config_path, out, seed, reps, steps))


@main.command("run-mc")
@_with_common_options
def run_mc_cmd(config_path, out, seed, reps, steps):
    """Simulate the SDE and write Monte Carlo means with standard errors."""
    sys.exit(_run_command("run-mc", config_path, out, seed, reps, steps))


@main.command("compare")
@_with_common_options
def compare_cmd(config_path, out, seed, reps, steps):
    """Join the deterministic series against the Monte Carlo mean."""
    sys.exit(_run_command("compare", config_path, out, seed, reps, steps))


@main.command("validate")
@click.option(
    "--inject",
    "mutations",
    multiple=True,
    type=click.Choice(MUTATIONS),
    hidden=True,
    help="Deliberately corrupt a computation (test hook).",
)
def validate_cmd(mutations):
    """Run the cross-module invariant suite."""
    results, ok = execute_validate(mutations)
    click.echo("%-34s %12s  %2s %12s  %s" % ("check", "measured", "", "threshold", "status"))
    for res in results:
        click.echo(res.row())
    sys.exit(EXIT_OK if ok else EXIT_VALIDATION)


if __name__ == "__main__":
    main()
