# src/common/settings.py

import hashlib
import os
from typing import Any, Dict, Iterable, List, Literal, Optional, Tuple, Union

import orjson
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.common.errors import ConfigError
from src.controller.controller import NoiseGranularity, SelectionMode, TemperatureCounter

# Sections left out of the config hash: they change where and how loudly a run
# is written, not what it computes.
_HASH_EXCLUDE = {"project": {"output_dir", "show_progress"}, "logging": True}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


# --- project / logging ---

class ProjectSettings(_Section):
    name: str = "autofield-selection"
    output_dir: str = "./runs/default"
    show_progress: bool = False


class LoggingSettings(_Section):
    level: str = "INFO"
    format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


# --- data ---

class FieldSettings(_Section):
    name: str
    kind: Literal["categorical", "numeric"] = "categorical"
    min_frequency: Optional[int] = Field(None, ge=1)


class DataSettings(_Section):
    source: Literal["synthetic", "delimited", "movielens", "encoded"] = "synthetic"
    path: Optional[str] = None
    delimiter: str = "\t"
    has_header: bool = False
    label_column: int = Field(0, ge=0)
    min_frequency: int = Field(2, ge=1)
    split_ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    fields: List[FieldSettings] = Field(default_factory=list)

    @field_validator("split_ratios")
    @classmethod
    def _ratios_sum_to_one(cls, value):
        if any(r < 0 for r in value) or abs(sum(value) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must be non-negative and sum to 1, got {list(value)}")
        return value

    @model_validator(mode="after")
    def _path_required(self):
        if self.source != "synthetic" and not self.path:
            raise ValueError(f"data.path is required for source '{self.source}'")
        if self.source == "delimited" and not self.fields:
            raise ValueError("data.fields must list the feature columns for source 'delimited'")
        return self


class SyntheticSettings(_Section):
    num_fields: int = Field(10, ge=2)
    informative_fields: List[int] = Field(default_factory=lambda: [0, 1, 2, 3])
    cardinality: Union[int, List[int]] = 10
    label_noise: float = Field(0.1, ge=0.0, le=0.5)
    num_rows: int = Field(20000, ge=1)


# --- model / controller ---

class ModelSettings(_Section):
    embedding_dim: int = Field(16, ge=1)
    hidden_sizes: List[int] = Field(default_factory=lambda: [16, 8], min_length=1)
    dropout: float = Field(0.2, ge=0.0, lt=1.0)
    learning_rate: float = Field(1e-4, gt=0.0)


class ControllerSettings(_Section):
    mode: SelectionMode = SelectionMode.GUMBEL
    learning_rate: float = Field(1e-4, gt=0.0)
    temperature_floor: float = Field(0.01, gt=0.0, le=1.0)
    temperature_slope: float = Field(5e-5, ge=0.0)
    noise_granularity: NoiseGranularity = NoiseGranularity.BATCH
    temperature_counter: TemperatureCounter = TemperatureCounter.CONTROLLER


# --- stages ---

class SearchSettings(_Section):
    k: int = Field(4, ge=1)
    update_frequency: int = Field(1, ge=1)
    batch_size: int = Field(2048, ge=1)
    max_epochs: int = Field(30, ge=1)
    patience: int = Field(3, ge=1)
    min_delta: float = Field(1e-5, ge=0.0)


class RetrainSettings(_Section):
    fields: Union[Literal["selection", "all"], List[int]] = "selection"
    batch_size: int = Field(2048, ge=1)
    max_epochs: int = Field(30, ge=1)
    patience: int = Field(3, ge=1)
    eval_workers: int = Field(1, ge=1)


class OracleSettings(_Section):
    k_filter: Optional[int] = Field(None, ge=1)
    max_fields: int = Field(16, ge=1)
    allow_over_cap: bool = False
    workers: int = Field(1, ge=1)
    max_epochs: int = Field(5, ge=1)
    hidden_sizes: List[int] = Field(default_factory=lambda: [16, 8], min_length=1)


class RunConfig(_Section):
    """The whole declarative run configuration (config/config.yaml)."""

    project: ProjectSettings = Field(default_factory=ProjectSettings)
    data: DataSettings = Field(default_factory=DataSettings)
    synthetic: SyntheticSettings = Field(default_factory=SyntheticSettings)
    model: ModelSettings = Field(default_factory=ModelSettings)
    controller: ControllerSettings = Field(default_factory=ControllerSettings)
    search: SearchSettings = Field(default_factory=SearchSettings)
    retrain: RetrainSettings = Field(default_factory=RetrainSettings)
    oracle: OracleSettings = Field(default_factory=OracleSettings)
    logging: LoggingSettings = Field(default_factory=LoggingSettings)
    seed: int = Field(2022, ge=0, lt=2**64)

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "RunConfig":
        try:
            return cls.model_validate(raw or {})
        except ValidationError as e:
            raise ConfigError(_format_validation_error(e)) from e

    @classmethod
    def load(cls, config_path: Optional[str] = None, overrides: Iterable[str] = ()) -> "RunConfig":
        """
        Loads the YAML config, then applies `section.key=value` overrides.
        Priority: overrides > config file > model defaults.
        """
        raw: Dict[str, Any] = {}
        if config_path is not None:
            if not os.path.exists(config_path):
                raise ConfigError(f"Config file not found: {config_path}")
            with open(config_path, "r", encoding="utf-8") as f:
                try:
                    raw = yaml.safe_load(f) or {}
                except yaml.YAMLError as e:
                    raise ConfigError(f"Error reading the config file '{config_path}': {e}") from e
            if not isinstance(raw, dict):
                raise ConfigError(f"Config file '{config_path}' must hold a mapping at the top level.")
        return cls.from_dict(apply_overrides(raw, overrides))

    def with_updates(self, overrides: Iterable[str]) -> "RunConfig":
        return RunConfig.from_dict(apply_overrides(self.model_dump(mode="json"), overrides))

    def config_hash(self) -> str:
        canonical = orjson.dumps(
            self.model_dump(mode="json", exclude=_HASH_EXCLUDE),
            option=orjson.OPT_SORT_KEYS,
        )
        return hashlib.sha256(canonical).hexdigest()[:16]


def apply_overrides(raw: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """Returns a copy of `raw` with every `dotted.key=value` override applied."""
    result = orjson.loads(orjson.dumps(raw))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"Override '{item}' must look like section.key=value")
        dotted, value_text = item.split("=", 1)
        keys = [k for k in dotted.strip().split(".") if k]
        if not keys:
            raise ConfigError(f"Override '{item}' has an empty key")
        try:
            value = yaml.safe_load(value_text)
        except yaml.YAMLError as e:
            raise ConfigError(f"Override '{item}' has an unparseable value: {e}") from e
        node = result
        for key in keys[:-1]:
            child = node.get(key)
            if child is None:
                child = {}
                node[key] = child
            if not isinstance(child, dict):
                raise ConfigError(f"Override '{item}': '{key}' is not a section")
            node = child
        node[keys[-1]] = value
    return result


def _format_validation_error(error: ValidationError) -> str:
    lines = ["Invalid configuration:"]
    for issue in error.errors():
        location = ".".join(str(part) for part in issue["loc"]) or "<root>"
        lines.append(f"  - {location}: {issue['msg']}")
    return "\n".join(lines)
