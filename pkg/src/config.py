"""Configuration management for scatterguard."""

import os
from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import yaml
from dotenv import load_dotenv

from src.models import ScenarioError, ScenarioSpec
from src.pipeline import PipelineConfigError, PipelineParams

DEFAULT_CONFIG_PATH = Path("config/config.yaml")
PRESETS_DIR = Path(__file__).resolve().parent.parent / "config" / "presets"

SECTION_KEYS = {
    "pipeline": {f.name for f in fields(PipelineParams)},
    "scenario": set(ScenarioSpec.FLAT_KEYS),
    "harness": {"trials", "max_workers", "progress"},
    "logging": {"level", "file", "max_size", "backup_count", "colored_output"},
}
LOG_LEVELS = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}


class ConfigError(Exception):
    """Configuration related errors."""
    pass


def preset_path(name: str) -> Path:
    """Resolve a preset name (``desk``, ``extended``) or a YAML path."""
    candidate = Path(name)
    if candidate.suffix in (".yaml", ".yml"):
        return candidate
    return PRESETS_DIR / f"{name}.yaml"


class Config:
    """Layered configuration: defaults, config file, preset, then environment."""

    def __init__(self, config_path: Optional[str] = None, preset: Optional[str] = None):
        """Initialize configuration.

        Args:
            config_path: Path to configuration file. If not provided, looks for
                        SCATTERGUARD_CONFIG env var or config/config.yaml; with
                        neither, built-in defaults are used
            preset: Preset name or YAML path layered over the file
        """
        load_dotenv()  # Load environment variables from .env file

        explicit = config_path or os.getenv("SCATTERGUARD_CONFIG")
        if explicit:
            self.config_path: Optional[Path] = Path(explicit)
        elif DEFAULT_CONFIG_PATH.exists():
            self.config_path = DEFAULT_CONFIG_PATH
        else:
            self.config_path = None

        self._config: Dict[str, Any] = {}
        if self.config_path is not None:
            self._merge(self._load_config(self.config_path))
        if preset:
            self._merge(self._load_config(preset_path(preset)))
        self._apply_env_overrides()
        self._validate_config()

    def _load_config(self, path: Path) -> Dict[str, Any]:
        """Load one YAML layer."""
        if not path.exists():
            raise ConfigError(f"Configuration file not found: {path}")

        try:
            with open(path, "r") as f:
                data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in config file {path}: {e}")
        except Exception as e:
            raise ConfigError(f"Error reading config file {path}: {e}")

        if not isinstance(data, dict):
            raise ConfigError(f"Config file {path} must contain a mapping")
        return data

    def _merge(self, layer: Mapping[str, Any]) -> None:
        for section, values in layer.items():
            if section not in SECTION_KEYS:
                raise ConfigError(f"Unknown configuration section: {section}")
            if values is None:
                continue
            if not isinstance(values, dict):
                raise ConfigError(f"Section '{section}' must be a mapping")
            for key, value in values.items():
                self._set_nested(f"{section}.{key}", value)

    def _validate_config(self) -> None:
        """Validate configuration values."""
        for section, allowed in SECTION_KEYS.items():
            unknown = sorted(set(self._config.get(section, {})) - allowed)
            if unknown:
                raise ConfigError(f"Unknown keys in '{section}': {', '.join(unknown)}")

        try:
            self.pipeline_params()
        except (PipelineConfigError, TypeError) as e:
            raise ConfigError(f"Invalid pipeline configuration: {e}")
        try:
            self.scenario()
        except ScenarioError as e:
            raise ConfigError(f"Invalid scenario configuration: {e}")

        if self.trials < 1:
            raise ConfigError("harness.trials must be >= 1")
        if self.max_workers < 1:
            raise ConfigError("harness.max_workers must be >= 1")
        if self.log_level.upper() not in LOG_LEVELS:
            raise ConfigError(f"Invalid logging.level: {self.log_level}")

    def _apply_env_overrides(self) -> None:
        """Apply environment variable overrides."""
        # Map of env vars to config paths
        env_mapping = {
            "SCATTERGUARD_SEED": "scenario.seed",
            "SCATTERGUARD_LOG_LEVEL": "logging.level",
            "SCATTERGUARD_TRIALS": "harness.trials",
        }

        for env_var, config_path in env_mapping.items():
            value = os.getenv(env_var)
            if value:
                self._set_nested(config_path, value)

    def _get_nested(self, path: str, default: Any = None) -> Any:
        """Get nested configuration value using dot notation."""
        keys = path.split(".")
        value = self._config

        for key in keys:
            if isinstance(value, dict) and key in value:
                value = value[key]
            else:
                return default

        return value

    def _set_nested(self, path: str, value: Any) -> None:
        """Set nested configuration value using dot notation."""
        keys = path.split(".")
        config = self._config

        for key in keys[:-1]:
            if key not in config:
                config[key] = {}
            config = config[key]

        config[keys[-1]] = value

    def _int(self, path: str, default: int) -> int:
        value = self._get_nested(path, default)
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{path} must be an integer, got {value!r}")

    def pipeline_params(self, overrides: Optional[Mapping[str, Any]] = None) -> PipelineParams:
        """Pipeline parameters from the configuration, then ``overrides``."""
        values = dict(self._get_nested("pipeline", {}) or {})
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return replace(PipelineParams(), **values)

    def scenario(self, overrides: Optional[Mapping[str, Any]] = None) -> ScenarioSpec:
        """Scenario from the configuration, then ``overrides`` (flat keys)."""
        spec = ScenarioSpec().with_flat(self._get_nested("scenario", {}) or {})
        if overrides:
            spec = spec.with_flat({k: v for k, v in overrides.items() if v is not None})
        return spec

    @property
    def seed(self) -> int:
        """Get the master seed."""
        return self._int("scenario.seed", 0)

    @property
    def trials(self) -> int:
        """Get trials per run."""
        return self._int("harness.trials", 100)

    @property
    def max_workers(self) -> int:
        """Get the trial thread pool size."""
        return self._int("harness.max_workers", 4)

    @property
    def progress(self) -> bool:
        """Whether to show progress bars."""
        return bool(self._get_nested("harness.progress", False))

    @property
    def log_level(self) -> str:
        """Get logging level."""
        return str(self._get_nested("logging.level", "INFO"))

    @property
    def log_file(self) -> Optional[str]:
        """Get log file path."""
        file_path = self._get_nested("logging.file", "")
        return file_path if file_path else None

    @property
    def log_max_size(self) -> int:
        """Get maximum log file size in MB."""
        return self._int("logging.max_size", 10)

    @property
    def log_backup_count(self) -> int:
        """Get number of log backup files."""
        return self._int("logging.backup_count", 5)

    @property
    def log_colored_output(self) -> bool:
        """Whether to use colored console output."""
        return bool(self._get_nested("logging.colored_output", True))
