"""
Tests for run orchestration and the command-line interface
"""

import csv
import json
from pathlib import Path

import pytest
from typer.testing import CliRunner

from spde_lab import cli
from spde_lab.config import parse_config, settings
from spde_lab.exceptions import ConfigurationError
from spde_lab.runner import CSV_COLUMNS, load_manifests, run, run_report

SMALL = ["--space.cutoff=1", "--sde.dt=0.01", "--sde.T=0.2"]


@pytest.fixture
def runner(monkeypatch):
    monkeypatch.setattr(cli, "setup_logging", lambda config: None)
    return CliRunner()


def _small_cfg(*extra):
    return parse_config("", [*SMALL, *extra])


def _run_dir(subcommand: str) -> Path:
    dirs = sorted(Path(settings.output_root).glob(f"{subcommand}-*"))
    assert len(dirs) == 1
    return dirs[0]


class TestRun:
    def test_estimate_at_time_zero(self):
        manifest = run("estimate", _small_cfg("experiment.t=0", "experiment.samples=4"))
        assert manifest.passed and manifest.exit_code == 0
        out_dir = _run_dir("estimate")
        with open(out_dir / "results.csv", newline="") as handle:
            rows = list(csv.DictReader(handle))
        assert list(rows[0]) == CSV_COLUMNS
        assert {row["quantity"] for row in rows} == {"semigroup", "feynman-kac"}
        assert all(row["config_hash"] == manifest.config_hash for row in rows)
        assert json.loads((out_dir / "manifest.json").read_text())["subcommand"] == "estimate"

    def test_null_seed_is_a_configuration_error(self):
        with pytest.raises(ConfigurationError):
            run("simulate", _small_cfg("sde.seed=null"))

    def test_unknown_subcommand(self):
        with pytest.raises(ConfigurationError):
            run("sweep", _small_cfg())

    def test_module_errors_are_recorded(self):
        manifest = run("verify", _small_cfg("experiment.estimate=bogus"))
        assert not manifest.passed
        assert manifest.exit_code == 3
        assert "InvalidArgumentError" in manifest.errors[0]

    def test_failed_check_exits_one(self):
        manifest = run("verify", _small_cfg("experiment.estimate=noise-assumptions", "noise.M1=1e-6"))
        assert manifest.exit_code == 1
        assert manifest.reports[0]["passed"] is False

    def test_output_directory_override(self, tmp_path):
        target = tmp_path / "elsewhere"
        manifest = run("estimate", _small_cfg("experiment.t=0", "experiment.samples=2", f"output.directory={target}"))
        assert all(str(target) in output for output in manifest.outputs)

    @pytest.mark.parametrize("c, has_closed_form", [("0.0", True), ("0.05", False)])
    def test_z_regularity_closed_form_only_for_constant_noise(self, c, has_closed_form):
        manifest = run("verify", _small_cfg("experiment.estimate=z-regularity", "experiment.paths=4", f"noise.c={c}"))
        witness = manifest.reports[0]["witness"]
        assert (witness["analytic_slope"] is not None) == has_closed_form


class TestReport:
    def test_empty_report(self):
        summary = run_report([])
        assert summary.text == ""
        assert summary.passed

    def test_report_collects_failures(self, tmp_path):
        run("verify", _small_cfg("experiment.estimate=noise-assumptions", "noise.M1=1e-6"))
        run("estimate", _small_cfg("experiment.t=0", "experiment.samples=2"))
        assert len(load_manifests([settings.output_root])) == 2

        summary = run_report([settings.output_root], tmp_path / "summary.json")
        assert not summary.passed
        assert summary.failures[0]["check"] == "noise-assumptions"
        assert "semigroup" in summary.text
        assert json.loads((tmp_path / "summary.json").read_text())["passed"] is False

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_manifests([tmp_path / "nothing.json"])


class TestCli:
    def test_estimate_command(self, runner):
        result = runner.invoke(cli.app, ["estimate", "--t", "0", "--samples", "4", *SMALL])
        assert result.exit_code == 0, result.output
        assert "semigroup" in result.output

    def test_simulate_is_byte_reproducible(self, runner):
        first = runner.invoke(cli.app, ["simulate", "--seed", "11", *SMALL])
        assert first.exit_code == 0, first.output
        checkpoint = _run_dir("simulate") / "trajectory.spdt"
        before = checkpoint.read_bytes()

        second = runner.invoke(cli.app, ["simulate", "--seed", "11", *SMALL])
        assert second.exit_code == 0
        assert checkpoint.read_bytes() == before

    def test_null_seed_exits_two(self, runner):
        result = runner.invoke(cli.app, ["simulate", *SMALL, "--sde.seed=null"])
        assert result.exit_code == 2

    def test_missing_config_file_exits_two(self, runner, tmp_path):
        result = runner.invoke(cli.app, ["estimate", "--config", str(tmp_path / "absent.json")])
        assert result.exit_code == 2

    def test_config_file_and_overrides(self, runner, tmp_path):
        path = tmp_path / "exp.json"
        path.write_text(json.dumps({"space": {"cutoff": 1}, "sde": {"dt": 0.01, "T": 0.2}}))
        result = runner.invoke(cli.app, ["estimate", "-c", str(path), "--t", "0", "--experiment.samples=3"])
        assert result.exit_code == 0, result.output
        config = json.loads((_run_dir("estimate") / "config.json").read_text())
        assert config["experiment"]["samples"] == 3

    def test_failed_check_exits_one(self, runner):
        result = runner.invoke(cli.app, ["verify", "--estimate", "noise-assumptions", *SMALL, "--noise.M1=1e-6"])
        assert result.exit_code == 1

    def test_control_command(self, runner):
        result = runner.invoke(cli.app, ["control", "--horizon", "0.02", *SMALL])
        assert result.exit_code == 0, result.output
        assert (_run_dir("control") / "control.spdt").exists()

    def test_report_without_manifests(self, runner):
        result = runner.invoke(cli.app, ["report"])
        assert result.exit_code == 0
        assert "No manifests found." in result.output

    def test_report_lists_failures(self, runner):
        runner.invoke(cli.app, ["verify", "--estimate", "noise-assumptions", *SMALL, "--noise.M1=1e-6"])
        result = runner.invoke(cli.app, ["report", settings.output_root])
        assert result.exit_code == 0
        assert "FAILED verify/noise-assumptions" in result.output

    def test_outputs_do_not_depend_on_worker_count(self, runner, monkeypatch):
        monkeypatch.setattr(settings, "chunk_memory_mb", 1)
        produced = {}
        for workers in ("1", "2"):
            for args, name in (
                (["estimate", "--t", "0.2", "--samples", "80"], "results.csv"),
                (["simulate", "--seed", "11"], "trajectory.spdt"),
            ):
                result = runner.invoke(cli.app, ["--workers", workers, *args, *SMALL])
                assert result.exit_code == 0, result.output
                produced.setdefault(name, []).append((_run_dir(args[0]) / name).read_bytes())
        for name, versions in produced.items():
            assert versions[0] == versions[1], name
