"""
Run orchestration: resolve, execute, persist

run() executes one subcommand and always returns a RunManifest; module
errors are recorded in it instead of escaping, and the exit code follows
0 pass, 1 check failure, 2 configuration error, 3 runtime error.
"""

import csv
import json
import platform
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, List, Optional, Union

import numpy as np
import psutil
from loguru import logger

from . import __version__
from .config import STOCHASTIC_SUBCOMMANDS, RunConfig, config_hash, serialize_config, settings
from .exceptions import ConfigurationError, SpdeLabError
from .handlers import SUBCOMMAND_HANDLERS, RunContext
from .services.galerkin_sde import sim_config_from_run
from .services.response_formatter import Summary, report
from .types import HandlerResult, RunManifest

CSV_COLUMNS = ["quantity", "value", "stderr", "N", "seed", "config_hash", "reference"]
MANIFEST_NAME = "manifest.json"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    return str(value)


def _dump(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, default=_json_default)


def host_info() -> dict:
    """Machine description stamped into manifests"""
    return {
        "platform": platform.platform(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpu_count": psutil.cpu_count(logical=True),
        "memory_mb": int(psutil.virtual_memory().total // 2 ** 20),
        "workers": settings.workers,
    }


def output_directory(subcommand: str, cfg: RunConfig) -> Path:
    """<output root>/<subcommand>-<config hash>; output.directory overrides the root"""
    root = Path(cfg.output.directory or settings.output_root)
    return root / f"{subcommand}-{config_hash(cfg)}"


def _execute(subcommand: str, build_context: Callable[[], RunContext]) -> HandlerResult:
    """Run a handler, turning module errors into a failed HandlerResult"""
    try:
        ctx = build_context()
        logger.debug(f"Executing {subcommand} in {ctx.out_dir}")
        result = SUBCOMMAND_HANDLERS[subcommand](ctx)
        logger.debug(f"Completed {subcommand}")
        return result
    except SpdeLabError as e:
        logger.error(f"{subcommand} failed with {type(e).__name__}: {e.message}")
        return HandlerResult(success=False, error=f"{type(e).__name__}: {e.message}", exit_code=e.exit_code)
    except MemoryError as e:
        logger.error(f"{subcommand} ran out of memory: {e}")
        return HandlerResult(success=False, error=f"MemoryError: {e}", exit_code=SpdeLabError.exit_code)
    except Exception as e:
        logger.exception(f"Unexpected error in {subcommand}: {e}")
        return HandlerResult(success=False, error=f"{type(e).__name__}: {e}", exit_code=SpdeLabError.exit_code)


def write_rows(path: Path, rows: Iterable[dict], digest: str) -> Path:
    """CSV with one row per scalar result"""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({
                **{key: row.get(key) for key in CSV_COLUMNS},
                "stderr": "" if row.get("stderr") is None else row["stderr"],
                "N": "" if row.get("N") is None else row["N"],
                "seed": "" if row.get("seed") is None else row["seed"],
                "config_hash": digest,
            })
    return path


def run(subcommand: str, cfg: RunConfig, resume: bool = False) -> RunManifest:
    """
    Execute a subcommand and persist its outputs

    Args:
        subcommand: One of simulate, estimate, gradient, voc-check, verify, ergodic, control
        cfg: Resolved configuration
        resume: Continue a simulate run from its checkpoint

    Returns:
        RunManifest, also written as manifest.json in the run directory
    """
    if subcommand not in SUBCOMMAND_HANDLERS:
        raise ConfigurationError(f"unknown subcommand '{subcommand}', expected one of {', '.join(SUBCOMMAND_HANDLERS)}")
    if subcommand in STOCHASTIC_SUBCOMMANDS and cfg.sde.seed is None:
        raise ConfigurationError(f"sde.seed is required for the stochastic subcommand '{subcommand}'")

    digest = config_hash(cfg)
    out_dir = output_directory(subcommand, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        subcommand=subcommand,
        config_hash=digest,
        version=__version__,
        started_at=_now(),
        host=host_info(),
    )
    config_path = out_dir / "config.json"
    config_path.write_text(serialize_config(cfg), encoding="utf-8")
    manifest.outputs.append(str(config_path))
    logger.info(f"Running {subcommand} (config {digest}) into {out_dir}")

    result = _execute(
        subcommand,
        lambda: RunContext(cfg=cfg, sim=sim_config_from_run(cfg), out_dir=out_dir, resume=resume),
    )

    data = result.data
    manifest.outputs.extend(data.get("outputs", []))
    manifest.reports = data.get("reports", [])
    manifest.estimates = data.get("estimates", [])
    if result.error:
        manifest.errors.append(result.error)

    formats = cfg.output.formats
    if "csv" in formats and data.get("rows"):
        manifest.outputs.append(str(write_rows(out_dir / "results.csv", data["rows"], digest)))
    if "json" in formats and (manifest.reports or manifest.estimates):
        report_path = out_dir / "reports.json"
        report_path.write_text(_dump({"reports": manifest.reports, "estimates": manifest.estimates}), encoding="utf-8")
        manifest.outputs.append(str(report_path))

    manifest.passed = result.success
    manifest.exit_code = result.exit_code if not result.success else 0
    manifest.finished_at = _now()
    manifest_path = out_dir / MANIFEST_NAME
    manifest.outputs.append(str(manifest_path))
    manifest_path.write_text(_dump(manifest.to_dict()), encoding="utf-8")

    level = "info" if manifest.passed else "warning"
    getattr(logger, level)(f"{subcommand} finished with exit code {manifest.exit_code}")
    return manifest


def load_manifests(paths: Iterable[Union[str, Path]]) -> List[RunManifest]:
    """Manifests from manifest files or from directories searched recursively"""
    found: List[Path] = []
    for item in paths:
        path = Path(item)
        if path.is_dir():
            found.extend(sorted(path.rglob(MANIFEST_NAME)))
        elif path.exists():
            found.append(path)
        else:
            raise ConfigurationError(f"no manifest at {path}")

    manifests = []
    for path in found:
        try:
            manifests.append(RunManifest.from_dict(json.loads(path.read_text(encoding="utf-8"))))
        except (json.JSONDecodeError, TypeError) as e:
            raise ConfigurationError(f"unreadable manifest {path}: {e}")
    return manifests


def run_report(paths: Iterable[Union[str, Path]], output: Optional[Union[str, Path]] = None) -> Summary:
    """Aggregate manifests and optionally write the JSON summary"""
    summary = report(load_manifests(paths))
    if output is not None:
        target = Path(output)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(summary.to_json(), encoding="utf-8")
    return summary
