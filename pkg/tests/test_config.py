"""
Tests for settings and the experiment document
"""

import json

import pytest

from spde_lab.config import (
    RunConfig,
    Settings,
    apply_override,
    config_hash,
    parse_config,
    serialize_config,
)
from spde_lab.exceptions import ConfigurationError


class TestSettings:
    def test_environment_prefix(self, monkeypatch):
        monkeypatch.setenv("SPDE_LAB_WORKERS", "3")
        monkeypatch.setenv("SPDE_LAB_LOG_LEVEL", "DEBUG")
        fresh = Settings()
        assert fresh.workers == 3
        assert fresh.log_level == "DEBUG"

    def test_defaults(self, monkeypatch):
        monkeypatch.delenv("SPDE_LAB_WORKERS", raising=False)
        fresh = Settings(_env_file=None)
        assert fresh.workers == 1
        assert fresh.max_nested_paths == 20_000_000


class TestParseConfig:
    def test_empty_document_gives_defaults(self):
        cfg = parse_config("")
        assert cfg == RunConfig()
        assert cfg.space.cutoff == 2
        assert cfg.sde.seed == 1234
        assert cfg.noise.alpha == 1.3
        assert cfg.experiment.paths == 1000
        assert cfg.experiment.samples == 1000

    def test_sections_merge_with_defaults(self):
        cfg = parse_config(json.dumps({"sde": {"dt": 0.01, "T": 0.5}, "noise": {"c": 0.0}}))
        assert cfg.sde.dt == 0.01
        assert cfg.sde.check_every == 100
        assert cfg.noise.c == 0.0

    def test_parse_error_reports_line(self):
        with pytest.raises(ConfigurationError) as err:
            parse_config('{\n  "space": {"cutoff": 1},\n  oops\n}')
        assert "line 3" in err.value.message

    def test_top_level_must_be_object(self):
        with pytest.raises(ConfigurationError):
            parse_config("[1, 2]")

    @pytest.mark.parametrize(
        "document, key",
        [
            ({"noise": {"alpha": 1.0}}, "noise.alpha"),
            ({"noise": {"r": 1.6}}, "noise.r"),
            ({"noise": {"g": 0.0}}, "noise.g"),
            ({"noise": {"delta": 1.5}}, "noise.delta"),
            ({"space": {"cutoff": 0}}, "space.cutoff"),
            ({"sde": {"dt": 0.03, "T": 0.5}}, "sde"),
            ({"experiment": {"samples": 1}}, "experiment.samples"),
        ],
    )
    def test_out_of_range_values(self, document, key):
        with pytest.raises(ConfigurationError) as err:
            parse_config(json.dumps(document))
        assert key in err.value.message

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigurationError):
            parse_config(json.dumps({"space": {"cutof": 2}}))

    def test_exit_code(self):
        assert ConfigurationError("x").exit_code == 2


class TestOverrides:
    def test_overrides_apply_after_document(self):
        cfg = parse_config(json.dumps({"space": {"cutoff": 3}}), ["--space.cutoff=1", "sde.seed=9"])
        assert cfg.space.cutoff == 1
        assert cfg.sde.seed == 9

    def test_null_and_string_values(self):
        data = {}
        apply_override(data, "sde.seed=null")
        apply_override(data, "experiment.phi=cos:0")
        apply_override(data, "--experiment.k-damp=2.5")
        assert data == {"sde": {"seed": None}, "experiment": {"phi": "cos:0", "k_damp": 2.5}}

    def test_malformed_override(self):
        with pytest.raises(ConfigurationError):
            apply_override({}, "space.cutoff")

    def test_cannot_descend_into_value(self):
        with pytest.raises(ConfigurationError):
            apply_override({"space": 3}, "space.cutoff=1")


class TestSerialization:
    def test_serialized_config_parses_back(self):
        cfg = parse_config("", ["noise.c=0.02", "experiment.t_grid=[0.1, 0.2]"])
        assert parse_config(serialize_config(cfg)) == cfg

    def test_hash_is_stable_and_sensitive(self):
        a = parse_config("")
        b = parse_config("")
        c = parse_config("", ["sde.seed=5"])
        assert config_hash(a) == config_hash(b)
        assert config_hash(a) != config_hash(c)
        assert len(config_hash(a)) == 16
