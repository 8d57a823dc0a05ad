"""Configuration management for ppp-ci.

Runtime settings come from ``PPP_*`` environment variables; experiment runs are
described by a JSON config file whose fields the CLI flags can override.

Environment variable PPP_EXPERIMENT_CONFIG can point to a custom experiment file.
"""

import json
import logging
import os
from functools import lru_cache
from pathlib import Path
from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from ppp_ci.models import CiQuery, ConfigError, QueryError, TestRectangle

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Runtime settings read from the environment."""

    model_config = SettingsConfigDict(env_prefix="PPP_", env_file=".env", extra="ignore")

    threads: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1, description="Worker thread cap")
    log_level: str = Field(default="WARNING", description="Root log level for the entry points")
    default_depth: int = Field(default=6, ge=0, description="Depth H when none is given")
    default_replicates: int = Field(default=100_000, ge=1, description="Replicates N when none is given")
    default_seed: int = Field(default=20240601, ge=0, description="Seed when none is given")
    block_size: int = Field(default=10_000, ge=1, description="Replicates per worker block")
    output_dir: str = Field(default="./ppp_runs", description="Default output directory")
    experiment_config: Optional[str] = Field(default=None, description="Path of the experiment config file")

    @field_validator("log_level")
    @classmethod
    def check_level(cls, v: str) -> str:
        level = v.upper()
        if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"unknown log level {v!r}")
        return level


@lru_cache
def get_settings() -> Settings:
    return Settings()


class ExperimentConfig(BaseModel):
    """One reproducible experiment run.

    ``measure`` is a builtin name, a path to a measure spec file, or an inline
    spec document. Label checks against the measure happen in
    ``check_labels`` once the measure is resolved.
    """

    command: Literal["check_ci", "simulate", "verify"] = Field(description="Command to run")
    measure: Optional[Union[str, dict[str, Any]]] = Field(default=None, description="Measure reference")
    query: Optional[str] = Field(default=None, description='CI query, e.g. "1 _|_ 2 | 3"')
    depth: Optional[int] = Field(default=None, ge=0, description="Depth H")
    replicates: Optional[int] = Field(default=None, ge=1, description="Replicates N")
    seed: Optional[int] = Field(default=None, ge=0, description="Root seed")
    windows: list[TestRectangle] = Field(default_factory=list, description="Named count windows")
    suite: Optional[str] = Field(default=None, description="Verification suite name")
    dumps: int = Field(default=1, ge=0, description="Pattern dumps written by simulate")
    out: Optional[str] = Field(default=None, description="Output directory")

    @model_validator(mode="after")
    def check_command_fields(self) -> "ExperimentConfig":
        if self.command == "check_ci":
            if self.measure is None or self.query is None:
                raise ValueError("check_ci needs a measure and a query")
            if self.depth is not None and self.depth < 1:
                raise ValueError("check_ci needs depth >= 1")
        if self.command == "simulate" and self.measure is None:
            raise ValueError("simulate needs a measure")
        if self.command == "verify" and self.suite is None:
            raise ValueError("verify needs a suite")
        if self.query is not None:
            try:
                CiQuery.parse(self.query)
            except QueryError as e:
                raise ValueError(str(e)) from e
        return self

    def parsed_query(self) -> CiQuery:
        if self.query is None:
            raise ConfigError("no query configured")
        return CiQuery.parse(self.query)

    def check_labels(self, labels: tuple[int, ...]) -> None:
        """Raise ConfigError when the query or a window names coordinates outside ``labels``."""
        known = set(labels)
        if self.query is not None:
            outside = self.parsed_query().labels - known
            if outside:
                raise ConfigError(f"query {self.query!r} names coordinates {sorted(outside)} outside {labels}")
        for window in self.windows:
            outside = set(window.sets) - known
            if outside:
                raise ConfigError(f"window {window.describe()!r} names coordinates {sorted(outside)} outside {labels}")


DEFAULT_CONFIG_FILE = Path("./experiment.json")


def load_experiment_config(config_path: Optional[str] = None) -> ExperimentConfig:
    """Load an experiment config from JSON.

    Args:
        config_path: Path to the JSON config file. If None, looks for:
            1. PPP_EXPERIMENT_CONFIG environment variable
            2. ./experiment.json

    Returns:
        ExperimentConfig instance.

    Raises:
        ConfigError: If no file is found or the document is invalid.
    """
    if config_path is None:
        config_path = get_settings().experiment_config or os.environ.get("PPP_EXPERIMENT_CONFIG")

    if config_path is None:
        if DEFAULT_CONFIG_FILE.exists():
            config_path = str(DEFAULT_CONFIG_FILE)

    if config_path is None:
        raise ConfigError(
            "No experiment config found. Pass --config, create ./experiment.json, "
            "or set the PPP_EXPERIMENT_CONFIG environment variable."
        )

    config_file = Path(config_path).expanduser()
    if not config_file.exists():
        raise ConfigError(f"Experiment config file not found: {config_file}")

    logger.info(f"Loading experiment configuration from {config_file}")
    try:
        with open(config_file, "r") as f:
            data = json.load(f)
        return ExperimentConfig(**data)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{config_file}: invalid JSON: {e}") from e
    except ValidationError as e:
        raise ConfigError(f"{config_file}: {e}") from e
