"""
Configuration Manager for the confound-saliency pipeline

This module handles loading, validating, and providing access to the pipeline
configuration from YAML (or JSON) files. It includes validation for the dataset,
training, GLM testing, saliency and logging sections.
"""

from pathlib import Path
from typing import Any, Dict, List, Optional

import structlog
import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator

from .errors import FormatError, InputValidationError

DEFAULT_CONFIG_PATH = "config/config.yaml"


class SystemConfig(BaseModel):
    """Configuration model for system identification."""
    name: str = "Confound-Aware Saliency Pipeline"
    version: str = "1.0.0"


class LoggingConfig(BaseModel):
    """Configuration model for logging settings."""
    level: str = "INFO"
    file_enabled: bool = False
    file_path: str = "logs/confound_saliency.log"
    max_file_size: str = "10MB"
    backup_count: int = Field(default=5, ge=1, le=20)
    console_enabled: bool = True
    json_format: bool = False
    date_format: str = "%Y-%m-%d %H:%M:%S"


class PipelineSettings(BaseModel):
    """Configuration model for run-wide settings."""
    seed: int = Field(default=7, ge=0)
    output_dir: str = "runs/default"


class DataConfig(BaseModel):
    """Configuration model for synthetic dataset generation."""
    n_per_group: int = Field(default=512, ge=1)


class TrainConfig(BaseModel):
    """Configuration model for mini-batch momentum training."""
    learning_rate: float = Field(default=0.05, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    epochs: int = Field(default=100, ge=0)
    batch_size: int = Field(default=32, ge=1)
    l2: float = Field(default=0.0, ge=0.0)
    seed: Optional[int] = Field(default=None, ge=0)
    accuracy_gate: float = Field(default=0.95, ge=0.0, le=1.0)


class GlmConfig(BaseModel):
    """Configuration model for the per-feature confound tests."""
    alpha: float = Field(default=0.05, gt=0.0, lt=1.0)
    confounders: List[str] = Field(default_factory=lambda: ["sigma_B", "sigma_C"])
    bonferroni: bool = False

    @field_validator("confounders", mode="before")
    @classmethod
    def split_confounders(cls, value: Any) -> Any:
        if isinstance(value, str):
            value = [name.strip() for name in value.split(",") if name.strip()]
        return value

    @field_validator("confounders")
    @classmethod
    def require_confounders(cls, value: List[str]) -> List[str]:
        if not value:
            raise ValueError("at least one confounder column is required")
        if len(set(value)) != len(value):
            raise ValueError("confounder columns must be distinct")
        return value


class SaliencyConfig(BaseModel):
    """Configuration model for saliency map generation."""
    per_subject: bool = False
    per_group: bool = False
    workers: int = Field(default=1, ge=1, le=64)
    crosscheck_images: int = Field(default=4, ge=0)


class PipelineConfig(BaseModel):
    """Complete, validated pipeline configuration."""
    system: SystemConfig = Field(default_factory=SystemConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)
    pipeline: PipelineSettings = Field(default_factory=PipelineSettings)
    data: DataConfig = Field(default_factory=DataConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    glm: GlmConfig = Field(default_factory=GlmConfig)
    saliency: SaliencyConfig = Field(default_factory=SaliencyConfig)


def _flat_key_sections() -> Dict[str, str]:
    """Map each bare key of a flat config to the section that owns it."""
    owners: Dict[str, str] = {}
    # earlier sections win on shared names such as ``seed``
    for section in ("pipeline", "data", "glm", "saliency", "train", "logging", "system"):
        model = PipelineConfig.model_fields[section].annotation
        for key in model.model_fields:
            owners.setdefault(key, section)
    return owners


def sectionize(raw: Dict[str, Any]) -> Dict[str, Any]:
    """Sort the top-level keys of a flat mapping into config sections."""
    owners = _flat_key_sections()
    sections: Dict[str, Any] = {}
    for key, value in raw.items():
        if key in PipelineConfig.model_fields and isinstance(value, dict):
            sections.setdefault(key, {}).update(value)
        elif key in owners:
            sections.setdefault(owners[key], {})[key] = value
        else:
            raise FormatError("Unknown configuration key", field=key)
    return sections


def _validation_field(exc: ValidationError) -> str:
    errors = exc.errors()
    if not errors:
        return "<root>"
    return ".".join(str(part) for part in errors[0]["loc"])


class ConfigManager:
    """
    Manages configuration loading, validation, and access for the pipeline.

    Sections may be nested (the layout of ``config/config.yaml``) or flat with
    every key at the top level; flags applied through ``apply_overrides`` take
    precedence over file values.
    """

    def __init__(self, config_path: Optional[str] = None):
        """
        Initialize the configuration manager.

        Args:
            config_path: Path to the configuration file. If None, uses the default
                location and falls back to built-in defaults when it is absent.
        """
        self.config_path = config_path or DEFAULT_CONFIG_PATH
        self._explicit_path = config_path is not None
        self._raw: Dict[str, Any] = {}
        self._config: Optional[PipelineConfig] = None

        self.logger = structlog.get_logger(__name__)
        self._load_config()

    def _load_config(self) -> None:
        """Load and validate the configuration file."""
        config_file = Path(self.config_path)
        if not config_file.exists():
            if self._explicit_path:
                raise InputValidationError(f"Configuration file not found: {self.config_path}")
            self.logger.info("config.defaults", path=self.config_path)
            self._raw = {}
            self._validate_and_parse_config()
            return

        with open(config_file, "r", encoding="utf-8") as file:
            try:
                raw_config = yaml.safe_load(file)
            except yaml.YAMLError as e:
                raise FormatError(f"Configuration file is not valid YAML/JSON: {e}") from e

        if not isinstance(raw_config, dict) or not raw_config:
            raise FormatError("Configuration file is empty or invalid", field=self.config_path)

        self._raw = sectionize(raw_config)
        self._validate_and_parse_config()
        self.logger.info("config.loaded", path=self.config_path)

    def _validate_and_parse_config(self) -> None:
        """Validate and parse the loaded configuration."""
        try:
            self._config = PipelineConfig(**self._raw)
        except ValidationError as e:
            field = _validation_field(e)
            self.logger.error("config.invalid", field=field, error=str(e))
            raise FormatError("Configuration validation failed", field=field) from e

    def reload_config(self) -> None:
        """Reload the configuration from file."""
        self.logger.info("config.reload", path=self.config_path)
        self._load_config()

    def apply_overrides(self, overrides: Dict[str, Dict[str, Any]]) -> None:
        """
        Apply command-line overrides section by section and re-validate.

        Args:
            overrides: ``{section: {key: value}}``; keys whose value is None are ignored.
        """
        merged = {section: dict(values) for section, values in self._raw.items()}
        for section, values in overrides.items():
            if section not in PipelineConfig.model_fields:
                raise FormatError("Unknown configuration section", field=section)
            for key, value in values.items():
                if value is not None:
                    merged.setdefault(section, {})[key] = value
        self._raw = merged
        self._validate_and_parse_config()

    @property
    def config(self) -> PipelineConfig:
        return self._config

    def get_system_config(self) -> SystemConfig:
        """Get system identification."""
        return self._config.system

    def get_logging_config(self) -> LoggingConfig:
        """Get logging configuration."""
        return self._config.logging

    def get_pipeline_settings(self) -> PipelineSettings:
        """Get run-wide settings."""
        return self._config.pipeline

    def get_data_config(self) -> DataConfig:
        """Get dataset configuration."""
        return self._config.data

    def get_train_config(self) -> TrainConfig:
        """Get training configuration."""
        return self._config.train

    def get_glm_config(self) -> GlmConfig:
        """Get GLM test configuration."""
        return self._config.glm

    def get_saliency_config(self) -> SaliencyConfig:
        """Get saliency configuration."""
        return self._config.saliency

    def to_dict(self) -> Dict[str, Any]:
        """Convert the configuration to a dictionary."""
        return self._config.model_dump()


# Global configuration instance
_config_manager: Optional[ConfigManager] = None


def get_config_manager() -> ConfigManager:
    """Get the global configuration manager instance."""
    global _config_manager
    if _config_manager is None:
        _config_manager = ConfigManager()
    return _config_manager


def initialize_config(config_path: Optional[str] = None) -> ConfigManager:
    """Initialize the global configuration manager."""
    global _config_manager
    _config_manager = ConfigManager(config_path)
    return _config_manager
