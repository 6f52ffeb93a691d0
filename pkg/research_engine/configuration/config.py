from dotenv import load_dotenv
from enum import Enum
from typing import Any
import json
import os
import pathlib

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from research_engine.models.errors import ConfigError, DataError
from research_engine.models.params_model import Bm25Params, FusionParams, RerankWeights
from research_engine.models.query_model import UnderstandingMode

load_dotenv()

VERSION = "0.4.0"
INDEX_FORMAT_VERSION = 1

PROJECT_ROOT = pathlib.Path(__file__).resolve().parents[2]
PAYLOAD_FOLDER = PROJECT_ROOT / "payloads"

# Secrets only ever come from the environment
PROVIDER_API_KEY = os.environ.get("RESEARCH_PROVIDER_API_KEY")
PROVIDER_ENDPOINT_OVERRIDE = os.environ.get("RESEARCH_PROVIDER_ENDPOINT")
EMBEDDER_API_KEY = os.environ.get("RESEARCH_EMBEDDER_API_KEY")
EMBEDDER_ENDPOINT_OVERRIDE = os.environ.get("RESEARCH_EMBEDDER_ENDPOINT")
LOG_LEVEL = os.environ.get("RESEARCH_LOG_LEVEL", "INFO").upper()
LOG_FILE = os.environ.get("RESEARCH_LOG_FILE") or None


class FilterMode(str, Enum):
    SOFT = "SOFT"
    HARD = "HARD"


class RecallPaths(str, Enum):
    HYBRID = "hybrid"
    BM25 = "bm25"
    EMBEDDING = "embedding"


class RerankMode(str, Enum):
    BASELINE = "baseline"
    PROVIDER = "provider"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PathsConfig(_Section):
    catalog: pathlib.Path | None = None
    index: pathlib.Path | None = None
    abbreviations: pathlib.Path = PAYLOAD_FOLDER / "abbreviations.json"
    variable_map: pathlib.Path = PAYLOAD_FOLDER / "variable_map.json"
    gazetteer: pathlib.Path = PAYLOAD_FOLDER / "gazetteer_terms.json"
    regions: pathlib.Path = PAYLOAD_FOLDER / "regions.json"
    topics: pathlib.Path = PAYLOAD_FOLDER / "topics.json"
    url_patterns: pathlib.Path = PAYLOAD_FOLDER / "url_patterns.json"
    prompts: pathlib.Path = PAYLOAD_FOLDER / "prompts"


class EmbedderConfig(_Section):
    kind: str = Field(default="hash", pattern="^(hash|remote)$")
    dimension: int = Field(default=256, ge=1)
    endpoint: str | None = None
    model: str | None = None
    batch_size: int = Field(default=32, ge=1)
    concurrency: int = Field(default=4, ge=1)
    timeout: float = Field(default=30.0, gt=0)


class UnderstandingConfig(_Section):
    intent_mode: UnderstandingMode = UnderstandingMode.RULES
    rewrite_mode: UnderstandingMode = UnderstandingMode.RULES
    spell_correction: bool = True


class RerankConfig(_Section):
    mode: RerankMode = RerankMode.BASELINE
    top_m: int = Field(default=50, ge=1)
    weights: RerankWeights = Field(default_factory=RerankWeights)
    batch_size: int = Field(default=20, ge=1, le=20)


class ProviderConfig(_Section):
    kind: str = Field(default="none", pattern="^(none|remote|stub|failing)$")
    endpoint: str | None = None
    model: str | None = None
    timeout: float = Field(default=60.0, gt=0)
    stub_table: pathlib.Path | None = None


class EngineConfig(_Section):
    paths: PathsConfig = Field(default_factory=PathsConfig)
    bm25: Bm25Params = Field(default_factory=Bm25Params)
    embedder: EmbedderConfig = Field(default_factory=EmbedderConfig)
    fusion: FusionParams = Field(default_factory=FusionParams)
    understanding: UnderstandingConfig = Field(default_factory=UnderstandingConfig)
    rerank: RerankConfig = Field(default_factory=RerankConfig)
    provider: ProviderConfig = Field(default_factory=ProviderConfig)
    filter_mode: FilterMode = FilterMode.SOFT
    recall_paths: RecallPaths = RecallPaths.HYBRID
    result_k: int = Field(default=100, ge=1)
    expand_queries: bool = False
    abbreviation_expansion: bool = True
    workers: int = Field(default=1, ge=1)


def _format_validation_error(error: ValidationError) -> str:
    first = error.errors()[0]
    location = ".".join(str(part) for part in first["loc"]) or "<root>"
    if first["type"] == "extra_forbidden":
        return f"unknown config key {location}"
    return f"invalid config value {location}: {first['msg']}"


def read_json_file(path: str | pathlib.Path, what: str) -> Any:
    """Parse a JSON asset; undecodable bytes and malformed JSON both surface as DataError."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except UnicodeDecodeError as e:
        raise DataError(f"{what} {path} is not valid UTF-8 ({e.reason})") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{what} {path} is not valid JSON: {e}") from e


def load_engine_config(path: str | pathlib.Path | None = None) -> EngineConfig:
    """
    Load an EngineConfig from a YAML file, or return the built-in defaults.

    Relative paths inside the file are resolved against the file's folder.
    """
    if path is None:
        return EngineConfig()

    config_file = pathlib.Path(path)
    if not config_file.is_file():
        raise ConfigError(f"config file not found: {config_file}")

    try:
        with open(config_file, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except (yaml.YAMLError, UnicodeDecodeError) as e:
        raise ConfigError(f"config file {config_file} is not valid YAML: {e}") from e

    if not isinstance(raw, dict):
        raise ConfigError(f"config file {config_file} must hold a mapping")

    for key, value in (raw.get("paths") or {}).items():
        if isinstance(value, str) and not pathlib.Path(value).is_absolute():
            raw["paths"][key] = str(config_file.parent / value)
    stub_table = (raw.get("provider") or {}).get("stub_table")
    if isinstance(stub_table, str) and not pathlib.Path(stub_table).is_absolute():
        raw["provider"]["stub_table"] = str(config_file.parent / stub_table)

    try:
        return EngineConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(_format_validation_error(e)) from e


def apply_overrides(config: EngineConfig, overrides: dict[str, Any]) -> EngineConfig:
    """
    Return a copy of `config` with command-line values applied on top.

    Keys are dotted paths ("fusion.rrf_k"); None values mean "flag not given" and are skipped.
    """
    data = config.model_dump()
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = data
        *parents, leaf = dotted.split(".")
        for part in parents:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config key {dotted}")
            node = node[part]
        if leaf not in node:
            raise ConfigError(f"unknown config key {dotted}")
        node[leaf] = value

    try:
        return EngineConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_format_validation_error(e)) from e
