"""Settings and input-file loading.

Settings come from ``src/config/defaults.yaml``, optionally overlaid by a
user YAML file, then by environment variables, then by explicit overrides
(CLI flags). Structure and harmonic-structure documents are JSON.
"""

from __future__ import annotations

import json
import logging
import os
from functools import lru_cache
from pathlib import Path
from typing import Any

import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator

from src.core.errors import ConfigError
from src.core.scalars import Mode

logger = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).parent.parent / "config"
DEFAULTS_PATH = CONFIG_DIR / "defaults.yaml"

# Environment variables mirrored by CLI flags
ENV_THREADS = "FD_THREADS"
ENV_MODE = "FD_MODE"


class Limits(BaseModel):
    max_cells: int = Field(10_000_000, gt=0)
    zoo_max_cells: int = Field(64, gt=0)


class Tolerances(BaseModel):
    symmetry: float = 1e-12
    proportionality: float = 1e-9
    rank: float = 1e-9
    psd: float = 1e-10
    eigen: float = 1e-10
    determinant: float = 1e-12
    zero_mass: float = 1e-14
    audit: float = 1e-9


class IndexSettings(BaseModel):
    tail_delta: float = Field(1e-6, ge=0.0, lt=1.0)
    refine_depth: int = Field(2, ge=1)
    quantiles: list[float] = Field(default_factory=lambda: [0.1, 0.5, 0.9])

    @field_validator("quantiles")
    @classmethod
    def _in_unit_interval(cls, v: list[float]) -> list[float]:
        if any(not 0.0 <= q <= 1.0 for q in v):
            raise ValueError(f"quantiles must lie in [0, 1], got {v}")
        return v


class DerivativeSettings(BaseModel):
    probe_depth: int = Field(3, ge=0)


class OutputSettings(BaseModel):
    dir: str = "results"


class Settings(BaseModel):
    """Validated runtime settings.

    Example:
        >>> s = load_settings(overrides={"mode": "float"})
        >>> s.mode
        <Mode.FLOAT: 'float'>
    """
    mode: Mode = Mode.RATIONAL
    threads: int = Field(1, ge=1)
    limits: Limits = Field(default_factory=Limits)
    tolerances: Tolerances = Field(default_factory=Tolerances)
    index: IndexSettings = Field(default_factory=IndexSettings)
    derivative: DerivativeSettings = Field(default_factory=DerivativeSettings)
    output: OutputSettings = Field(default_factory=OutputSettings)

    model_config = {"extra": "forbid"}

    @field_validator("mode", mode="before")
    @classmethod
    def _parse_mode(cls, v: Any) -> Mode:
        return v if isinstance(v, Mode) else Mode.from_string(str(v))


def load_yaml(path: str | Path) -> dict[str, Any]:
    """Load a YAML mapping; relative paths resolve against the working directory.

    Raises:
        ConfigError: If the file is missing, malformed, or not a mapping
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"YAML file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in {path}: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"Expected a mapping at the top of {path}")
    return data


def load_json(path: str | Path) -> dict[str, Any]:
    """Load a JSON object from disk.

    Raises:
        ConfigError: If the file is missing, malformed, or not an object
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"JSON file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON in {path}: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"Expected a JSON object in {path}")
    return data


def _deep_merge(base: dict[str, Any], extra: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        elif value is not None:
            merged[key] = value
    return merged


def _env_layer() -> dict[str, Any]:
    layer: dict[str, Any] = {}
    if os.environ.get(ENV_THREADS):
        try:
            layer["threads"] = int(os.environ[ENV_THREADS])
        except ValueError:
            raise ConfigError(f"{ENV_THREADS} must be an integer, got {os.environ[ENV_THREADS]!r}") from None
    if os.environ.get(ENV_MODE):
        layer["mode"] = os.environ[ENV_MODE]
    return layer


def load_settings(
    config_path: str | Path | None = None,
    overrides: dict[str, Any] | None = None,
) -> Settings:
    """Resolve settings with precedence overrides > file > environment > defaults.

    Args:
        config_path: Optional user YAML file
        overrides: Nested dict of explicit values (None entries are ignored)

    Raises:
        ConfigError: If any layer fails validation
    """
    data = load_yaml(DEFAULTS_PATH)
    data = _deep_merge(data, _env_layer())
    if config_path is not None:
        data = _deep_merge(data, load_yaml(config_path))
    if overrides:
        data = _deep_merge(data, overrides)
    try:
        settings = Settings.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid settings: {e}") from None
    logger.debug("Resolved settings: %s", settings.model_dump())
    return settings


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Process-wide default settings (defaults + environment)."""
    return load_settings()
