from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Literal, Optional

from dotenv import load_dotenv
from pydantic import AliasChoices, BaseModel, ConfigDict, Field, ValidationError

from .exceptions import ConfigError
from .jumplab_types import ExecutorKind


class LabSettings(BaseModel):
    seed: int = 7
    threads: int = Field(default=1, ge=1)
    out_dir: Path = Path("jumplab-out")
    executor: ExecutorKind = "thread"

    model_config = ConfigDict(extra="forbid")

    @classmethod
    def from_env(cls, dotenv_path: Optional[str | Path] = None) -> LabSettings:
        """Read JUMPLAB_* variables, loading a .env file first if present"""
        load_dotenv(dotenv_path)
        values: dict[str, Any] = {}

        for field, env_name in (
            ("seed", "JUMPLAB_SEED"),
            ("threads", "JUMPLAB_THREADS"),
            ("out_dir", "JUMPLAB_OUT_DIR"),
            ("executor", "JUMPLAB_EXECUTOR"),
        ):
            if env_name in os.environ:
                values[field] = os.environ[env_name]

        try:
            return cls.model_validate(values)
        except ValidationError as e:
            errors = e.errors(include_url=False, include_context=False)
            raise ConfigError("Invalid JUMPLAB_* environment", errors) from e


class Tolerances(BaseModel):
    epsilon: float = Field(default=1e-2, gt=0, validation_alias=AliasChoices("epsilon", "eps"))
    alpha: float = Field(default=0.5, gt=0, lt=1)
    explosion_level: float = Field(default=1e3, gt=0, validation_alias=AliasChoices("explosion_level", "K"))
    eta: float = Field(default=1e-3, gt=0, lt=1)
    qv_growth: float = Field(default=0.1, gt=0)
    cap: float = Field(default=1e6, gt=0)

    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class FamilyConfig(BaseModel):
    kind: Literal["default", "rules"] = "default"
    rules: list[str] = Field(default_factory=list)

    model_config = ConfigDict(extra="forbid")


class ReportConfig(BaseModel):
    csv: bool = True
    name: Optional[str] = None

    model_config = ConfigDict(extra="forbid")


class CriterionConfig(BaseModel):
    tag: str
    a: float = 0.0
    delta: float = 0.5
    c: float = 0.5

    model_config = ConfigDict(extra="forbid")


class ExperimentConfig(BaseModel):
    model: Optional[dict[str, Any]] = None
    preset: Optional[str] = None
    n_paths: int = Field(default=1000, ge=1)
    horizon: Optional[float] = Field(default=None, gt=0)
    seed: int = 7
    tolerances: Tolerances = Field(default_factory=Tolerances)
    family: FamilyConfig = Field(default_factory=FamilyConfig)
    report: ReportConfig = Field(default_factory=ReportConfig)
    equalities: list[str] = Field(default_factory=list)
    criteria: list[CriterionConfig] = Field(default_factory=list)
    follmer: bool = False

    model_config = ConfigDict(extra="forbid")


def load_experiment_config(source: str | Path | dict[str, Any]) -> ExperimentConfig:
    """Parse an experiment config from a JSON file or mapping

    Raises
    ------
    ConfigError
        When the file is unreadable or any field fails validation. The pydantic
        error list is attached as ``errors``.
    """
    if isinstance(source, dict):
        raw = source
    else:
        try:
            raw = json.loads(Path(source).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read config {source}: {e}") from e

    try:
        config = ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError("Invalid experiment config", e.errors(include_url=False, include_context=False)) from e

    if (config.model is None) == (config.preset is None):
        raise ConfigError(
            "Config needs exactly one of model or preset",
            [{"loc": ("model", "preset"), "msg": "exactly one required"}],
        )

    return config
