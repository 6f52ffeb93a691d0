import logging
import pathlib

import pytest
import yaml

from research_engine.configuration.config import (
    PAYLOAD_FOLDER, EngineConfig, FilterMode, RecallPaths, RerankMode, apply_overrides, load_engine_config,
)
from research_engine.logging.logging_utils import SpectificLevelFilter, build_logging_config
from research_engine.models.errors import ConfigError
from research_engine.models.params_model import FusionMethod


def write_yaml(tmp_path, data) -> pathlib.Path:
    path = tmp_path / "engine.yaml"
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


def test_defaults():
    config = load_engine_config()
    assert config == EngineConfig()
    assert config.bm25.k1 == 1.2 and config.bm25.b == 0.75
    assert config.fusion.method is FusionMethod.RRF and config.fusion.rrf_k == 60
    assert config.filter_mode is FilterMode.SOFT
    assert config.recall_paths is RecallPaths.HYBRID
    assert config.rerank.mode is RerankMode.BASELINE and config.rerank.top_m == 50
    assert config.embedder.dimension == 256
    assert config.paths.abbreviations == PAYLOAD_FOLDER / "abbreviations.json"


def test_yaml_values_replace_defaults(tmp_path):
    config = load_engine_config(write_yaml(tmp_path, {"filter_mode": "HARD", "fusion": {"rrf_k": 10}}))
    assert config.filter_mode is FilterMode.HARD
    assert config.fusion.rrf_k == 10
    assert config.fusion.pool_size == EngineConfig().fusion.pool_size


def test_relative_paths_resolve_against_the_config_folder(tmp_path):
    config = load_engine_config(write_yaml(tmp_path, {
        "paths": {"catalog": "data/catalog.jsonl", "abbreviations": "/etc/abbr.json"},
        "provider": {"kind": "stub", "stub_table": "stubs.json"},
    }))
    assert config.paths.catalog == tmp_path / "data" / "catalog.jsonl"
    assert config.paths.abbreviations == pathlib.Path("/etc/abbr.json")
    assert config.provider.stub_table == tmp_path / "stubs.json"


@pytest.mark.parametrize("data, message", [
    ({"fusion": {"rrf_kk": 60}}, "unknown config key fusion.rrf_kk"),
    ({"filter_mode": "MAYBE"}, "invalid config value filter_mode"),
    ({"rerank": {"batch_size": 50}}, "invalid config value rerank.batch_size"),
])
def test_invalid_yaml_values(tmp_path, data, message):
    with pytest.raises(ConfigError, match=message):
        load_engine_config(write_yaml(tmp_path, data))


def test_config_file_must_exist_and_hold_a_mapping(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_engine_config(tmp_path / "missing.yaml")
    path = tmp_path / "list.yaml"
    path.write_text("- a\n- b\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="mapping"):
        load_engine_config(path)


def test_overrides_beat_file_values(tmp_path):
    config = load_engine_config(write_yaml(tmp_path, {"result_k": 7, "fusion": {"rrf_k": 10}}))
    overridden = apply_overrides(config, {"result_k": 3, "fusion.rrf_k": None, "rerank.top_m": 5})
    assert overridden.result_k == 3
    assert overridden.fusion.rrf_k == 10
    assert overridden.rerank.top_m == 5
    assert config.result_k == 7


def test_unknown_or_invalid_override(tmp_path):
    with pytest.raises(ConfigError, match="unknown config key fusion.nope"):
        apply_overrides(EngineConfig(), {"fusion.nope": 1})
    with pytest.raises(ConfigError, match="unknown config key result_k.x"):
        apply_overrides(EngineConfig(), {"result_k.x": 1})
    with pytest.raises(ConfigError, match="result_k"):
        apply_overrides(EngineConfig(), {"result_k": 0})


def test_logging_config_routes_consoles_to_stderr(tmp_path):
    config = build_logging_config("debug", str(tmp_path / "run.log"))
    assert config["root"]["level"] == "DEBUG"
    assert config["root"]["handlers"][-1] == "file"
    assert all(h["stream"] == "ext://sys.stderr" for name, h in config["handlers"].items() if name != "file")
    assert "file" not in build_logging_config()["handlers"]


def test_level_filter_passes_one_level():
    only_warnings = SpectificLevelFilter(logging.WARNING)
    record = logging.LogRecord("x", logging.WARNING, __file__, 1, "msg", None, None)
    assert only_warnings.filter(record)
    record.levelno = logging.ERROR
    assert not only_warnings.filter(record)
