"""
Command-line interface for spde-lab

    spde-lab <subcommand> --config <file> [--section.key=value ...]
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional

import typer
from loguru import logger
from rich.console import Console

from . import __description__, __version__
from .config import parse_config, settings
from .exceptions import ConfigurationError
from .runner import run, run_report
from .services.response_formatter import report
from .utils.error_handling import handle_errors
from .utils.logging import setup_logging

app = typer.Typer(name="spde-lab", help=__description__, no_args_is_help=True, add_completion=False)
console = Console()

EXTRA_ARGS = {"allow_extra_args": True, "ignore_unknown_options": True}

ConfigOption = typer.Option(None, "--config", "-c", help="JSON experiment document")
SeedOption = typer.Option(None, "--seed", help="Root seed of the replica streams")
PhiOption = typer.Option(None, "--phi", help="Observable name, e.g. norm-sq or cos:0")
TimeOption = typer.Option(None, "--t", help="Evaluation time")
DampOption = typer.Option(None, "--k-damp", help="Feynman-Kac damping K")
SamplesOption = typer.Option(None, "--samples", help="Monte Carlo sample count")


def _read_config(path: Optional[Path]) -> str:
    if path is None:
        return ""
    if not path.exists():
        raise ConfigurationError(f"config file {path} does not exist")
    return path.read_text(encoding="utf-8")


def _dispatch(
    subcommand: str,
    ctx: typer.Context,
    config: Optional[Path],
    named: Dict[str, Any],
    resume: bool = False,
) -> None:
    """Resolve the config (named options first, free overrides last), run and exit with the run's code"""
    overrides = [f"{key}={json.dumps(value)}" for key, value in named.items() if value is not None]
    overrides += list(ctx.args)
    cfg = parse_config(_read_config(config), overrides)
    manifest = run(subcommand, cfg, resume=resume)
    console.print(report([manifest]).text, markup=False, highlight=False)
    raise typer.Exit(code=manifest.exit_code)


@app.callback()
def main(
    log_level: Optional[str] = typer.Option(None, "--log-level", help="Override SPDE_LAB_LOG_LEVEL"),
    workers: Optional[int] = typer.Option(None, "--workers", min=1, help="Override SPDE_LAB_WORKERS"),
) -> None:
    """Spectral-Galerkin laboratory for the stochastic 3D Navier-Stokes equations"""
    if log_level:
        settings.log_level = log_level.upper()
    if workers:
        settings.workers = workers
    setup_logging(settings)
    logger.debug(f"spde-lab {__version__}, output root {settings.output_root}")


@app.command(context_settings=EXTRA_ARGS)
@handle_errors
def simulate(
    ctx: typer.Context,
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    resume: bool = typer.Option(False, "--resume", help="Continue from an existing trajectory checkpoint"),
) -> None:
    """Integrate one replica and write its trajectory checkpoint"""
    _dispatch("simulate", ctx, config, {"sde.seed": seed}, resume=resume)


@app.command(context_settings=EXTRA_ARGS)
@handle_errors
def estimate(
    ctx: typer.Context,
    config: Optional[Path] = ConfigOption,
    phi: Optional[str] = PhiOption,
    t: Optional[float] = TimeOption,
    k_damp: Optional[float] = DampOption,
    samples: Optional[int] = SamplesOption,
    seed: Optional[int] = SeedOption,
) -> None:
    """Estimate the transition semigroup (and the damped semigroup for K > 0)"""
    _dispatch("estimate", ctx, config, {
        "experiment.phi": phi, "experiment.t": t, "experiment.k_damp": k_damp,
        "experiment.samples": samples, "sde.seed": seed,
    })


@app.command(context_settings=EXTRA_ARGS)
@handle_errors
def gradient(
    ctx: typer.Context,
    config: Optional[Path] = ConfigOption,
    phi: Optional[str] = PhiOption,
    t: Optional[float] = TimeOption,
    k_damp: Optional[float] = DampOption,
    samples: Optional[int] = SamplesOption,
    seed: Optional[int] = SeedOption,
) -> None:
    """Bismut-Elworthy-Li gradient against a common-random-number finite difference"""
    _dispatch("gradient", ctx, config, {
        "experiment.phi": phi, "experiment.t": t, "experiment.k_damp": k_damp,
        "experiment.samples": samples, "sde.seed": seed,
    })


@app.command("voc-check", context_settings=EXTRA_ARGS)
@handle_errors
def voc_check(
    ctx: typer.Context,
    config: Optional[Path] = ConfigOption,
    phi: Optional[str] = PhiOption,
    t: Optional[float] = TimeOption,
    k_damp: Optional[float] = DampOption,
    seed: Optional[int] = SeedOption,
) -> None:
    """Variation of constants between the transition and damped semigroups"""
    _dispatch("voc-check", ctx, config, {
        "experiment.phi": phi, "experiment.t": t, "experiment.k_damp": k_damp, "sde.seed": seed,
    })


@app.command(context_settings=EXTRA_ARGS)
@handle_errors
def verify(
    ctx: typer.Context,
    config: Optional[Path] = ConfigOption,
    estimate_name: Optional[str] = typer.Option(None, "--estimate", help="Which a priori estimate to witness"),
    samples: Optional[int] = SamplesOption,
    seed: Optional[int] = SeedOption,
) -> None:
    """Run one a priori estimate harness"""
    _dispatch("verify", ctx, config, {
        "experiment.estimate": estimate_name, "experiment.samples": samples, "sde.seed": seed,
    })


@app.command(context_settings=EXTRA_ARGS)
@handle_errors
def ergodic(
    ctx: typer.Context,
    config: Optional[Path] = ConfigOption,
    t_long: Optional[float] = typer.Option(None, "--t-long", help="Length of each long run"),
    burn_in: Optional[float] = typer.Option(None, "--burn-in", help="Discarded initial time"),
    stride: Optional[float] = typer.Option(None, "--stride", help="Time between retained samples"),
    seed: Optional[int] = SeedOption,
) -> None:
    """Empirical invariant measure and its mixing diagnostics"""
    _dispatch("ergodic", ctx, config, {
        "experiment.t_long": t_long, "experiment.burn_in": burn_in, "experiment.stride": stride, "sde.seed": seed,
    })


@app.command(context_settings=EXTRA_ARGS)
@handle_errors
def control(
    ctx: typer.Context,
    config: Optional[Path] = ConfigOption,
    target: Optional[str] = typer.Option(None, "--target", help="zero, shear, random or a field file"),
    epsilon: Optional[float] = typer.Option(None, "--epsilon", help="Radius of the target D(A) ball"),
    horizon: Optional[float] = typer.Option(None, "--horizon", help="Control horizon T"),
    seed: Optional[int] = SeedOption,
) -> None:
    """Steer to the target ball and replay the control"""
    _dispatch("control", ctx, config, {
        "experiment.target": target, "experiment.epsilon": epsilon, "experiment.horizon": horizon, "sde.seed": seed,
    })


@app.command("report")
@handle_errors
def report_command(
    paths: Optional[List[Path]] = typer.Argument(None, help="Manifest files or run directories"),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="Write the JSON summary here"),
) -> None:
    """Aggregate run manifests into one summary table"""
    summary = run_report(paths or [], output)
    if summary.rows:
        console.print(summary.text, markup=False, highlight=False)
    else:
        console.print("No manifests found.")
    for failure in summary.failures:
        console.print(f"FAILED {failure['run']}/{failure['check']}: {failure['reference']}", markup=False)
