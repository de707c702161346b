"""
Configuration management for dcaps runs.

Loads the packaged defaults, merges the user's YAML file and ``--set``
overrides on top, applies explicit command flags last, and resolves the
result into a ``RunConfig`` (network + training + data + threads). The
resolved config is what every command writes as ``run_config.yaml``.
"""

from __future__ import annotations

import copy
import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from dcaps.core.atomic import write_text_atomic
from dcaps.core.errors import ConfigError
from dcaps.core.runtime import resolve_threads
from dcaps.network.config import DCapsConfig, preset
from dcaps.training.trainer import TrainConfig

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent / "config" / "default_config.yaml"
RUN_CONFIG_NAME = "run_config.yaml"
SECTIONS = ("dcaps", "network", "training", "data", "global")
GROUP_BY = ("polyp", "patient")


@dataclass(frozen=True)
class DataConfig:
    manifest: str | None = None
    experiment: int = 1
    height: int = 64
    width: int = 80
    augment: bool = False
    group_by: str = "polyp"

    def validate(self) -> None:
        if self.experiment not in (1, 2, 3):
            raise ConfigError(f"data.experiment must be 1, 2 or 3; got {self.experiment!r}")
        if self.height < 1 or self.width < 1:
            raise ConfigError(f"data.height and data.width must be >= 1, got {self.height}×{self.width}")
        if self.group_by not in GROUP_BY:
            raise ConfigError(f"data.group_by must be one of {', '.join(GROUP_BY)}; got {self.group_by!r}")


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs, fully resolved before any work starts."""

    network: DCapsConfig
    training: TrainConfig
    data: DataConfig
    threads: int = 1
    preset: str = "desk"

    @property
    def effective_network(self) -> DCapsConfig:
        """Network config with the training overrides (routing, no-recon) applied."""
        return self.training.apply_to(self.network)

    def to_dict(self) -> dict[str, Any]:
        return {
            "dcaps": {"config_version": ConfigManager.CONFIG_VERSION, "preset": self.preset},
            "network": self.effective_network.to_dict(),
            "training": self.training.to_dict(),
            "data": dataclasses.asdict(self.data),
            "global": {"threads": self.threads},
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), default_flow_style=False, sort_keys=True)

    def write(self, out_dir: str | Path) -> Path:
        path = Path(out_dir) / RUN_CONFIG_NAME
        write_text_atomic(path, self.to_yaml())
        return path


class ConfigManager:
    """
    Resolves dcaps configuration from every source.

    Configuration priority (highest to lowest):
    1. Explicit command flags (passed to ``resolve``)
    2. CLI overrides (--set section.key=value)
    3. The --config file, else ./dcaps_config.yaml, else ~/.config/dcaps/config.yaml
    4. Packaged defaults (dcaps/config/default_config.yaml)
    """

    CONFIG_VERSION = "1.0"

    def __init__(self, set_args: list[str] | None = None, logger: logging.Logger | None = None):
        """
        :param set_args: Raw ``--set`` strings
        :param logger: Logger instance for debug/error messages
        """
        self.set_args = list(set_args or [])
        self.logger = logger or logging.getLogger("dcaps.config")
        self.config_paths = [
            Path("./dcaps_config.yaml"),
            Path.home() / ".config" / "dcaps" / "config.yaml",
        ]
        self.config_data: dict[str, Any] = self._load_yaml_file(DEFAULT_CONFIG_PATH)
        self.loaded_file: Path | None = None
        self.cli_overrides: dict[str, Any] = {}

    def load(self, config_file: str | None = None) -> bool:
        """
        Merge a config file over the packaged defaults, then the --set overrides.

        :param config_file: Specific config file path (from --config)
        :return: True if a user config file was found and merged
        :raises ConfigError: the explicit file is missing or unreadable
        """
        if config_file:
            config_path = Path(config_file).expanduser()
            if not config_path.exists():
                raise ConfigError(f"config file not found: {config_path}")
            self._merge_file(config_path)
        else:
            for config_path in self.config_paths:
                config_path = config_path.expanduser()
                if config_path.exists():
                    self._merge_file(config_path)
                    break

        if self.set_args:
            self._parse_cli_overrides(self.set_args)
            self.config_data = self._deep_merge(self.config_data, self.cli_overrides)
            self.logger.debug(f"Applied {len(self.set_args)} --set override(s)")

        if self.loaded_file:
            self.logger.debug(f"Configuration loaded from {self.loaded_file}")
            return True
        self.logger.debug("No configuration file found, using defaults and CLI overrides")
        return False

    def _merge_file(self, path: Path) -> None:
        self.config_data = self._deep_merge(self.config_data, self._load_yaml_file(path))
        self.loaded_file = path
        self.logger.info(f"Loaded config from: {path}")

    def _load_yaml_file(self, path: Path) -> dict[str, Any]:
        """
        Load and parse a YAML configuration file.

        :param path: Path to YAML file
        :return: Parsed configuration dictionary
        :raises ConfigError: unreadable file, non-mapping content or unknown sections
        """
        try:
            with open(path) as f:
                data = yaml.safe_load(f)
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot load config {path}: {e}") from e
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must contain a YAML mapping")
        unknown = sorted(set(data) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"config file {path}: unknown section(s) {', '.join(unknown)}")
        for section in SECTIONS:
            if data.get(section) is None:
                data[section] = {}
            elif not isinstance(data[section], dict):
                raise ConfigError(f"config file {path}: section {section!r} must be a mapping")
        return data

    def _parse_cli_overrides(self, set_args: list[str]) -> None:
        """
        Parse --set arguments into a nested dictionary.

        Examples:
            --set training.epochs=5
            --set network.recon.hidden_channels=8
            --set global.threads=4

        :param set_args: List of "section.key[.key...]=value" strings
        """
        for arg in set_args:
            if '=' not in arg:
                self.logger.warning(f"Invalid --set format (missing '='): {arg}")
                continue

            key_path, value = arg.split('=', 1)
            parts = key_path.strip().split('.')

            if len(parts) < 2:
                self.logger.warning(f"Invalid --set format (expected section.key=value): {arg}")
                continue
            if parts[0] not in SECTIONS:
                raise ConfigError(f"--set {arg}: unknown section {parts[0]!r}")

            parsed_value = self._parse_value(value)
            current = self.cli_overrides.setdefault(parts[0], {})
            for key in parts[1:-1]:
                if not isinstance(current.get(key), dict):
                    current[key] = {}
                current = current[key]
            current[parts[-1]] = parsed_value

            self.logger.debug(f"CLI override: {key_path} = {parsed_value}")

    def _parse_value(self, value: str) -> Any:
        """
        Parse string value into appropriate Python type.

        :param value: String value from CLI
        :return: Parsed value (bool, None, int, float, list, or str)
        """
        value = value.strip()
        if value.lower() in ('true', 'yes'):
            return True
        if value.lower() in ('false', 'no'):
            return False
        if value.lower() in ('null', 'none', ''):
            return None

        try:
            return int(value)
        except ValueError:
            pass
        try:
            return float(value)
        except ValueError:
            pass

        if ',' in value:
            return [self._parse_value(item) for item in value.split(',')]
        return value

    def _deep_merge(self, base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
        """
        Deep merge two dictionaries, with override taking precedence.

        :param base: Base dictionary
        :param override: Override dictionary (takes precedence)
        :return: Merged dictionary
        """
        result = copy.deepcopy(base)
        for key, value in override.items():
            if key in result and isinstance(result[key], dict) and isinstance(value, dict):
                result[key] = self._deep_merge(result[key], value)
            else:
                result[key] = copy.deepcopy(value)
        return result

    def section(self, name: str) -> dict[str, Any]:
        return dict(self.config_data.get(name) or {})

    def resolve(self, flags: dict[str, Any] | None = None, threads: int | None = None) -> RunConfig:
        """
        Apply explicit command flags and build a validated ``RunConfig``.

        :param flags: Dotted keys (``"training.epochs"``) to values; ``None`` values are ignored
        :param threads: --threads flag, if the command has one
        :raises ConfigError: any invalid value
        """
        data = copy.deepcopy(self.config_data)
        for dotted, value in (flags or {}).items():
            if value is None:
                continue
            section, _, key = dotted.partition('.')
            if section not in SECTIONS or not key:
                raise ConfigError(f"invalid flag key {dotted!r}")
            data[section][key] = value

        network_section = dict(data["network"])
        preset_name = str(network_section.pop("preset", "desk"))
        num_classes = int(network_section.get("num_classes", 1))
        base = preset(preset_name, num_classes=num_classes)
        try:
            data_cfg = DataConfig(**data["data"])
        except TypeError as e:
            raise ConfigError(f"data section: {e}") from e
        data_cfg.validate()

        network = DCapsConfig.from_dict(self._deep_merge(base.to_dict(), network_section))
        network = network.with_input_shape(data_cfg.height, data_cfg.width)
        network.validate()

        training_section = dict(data["training"])
        training_section["augment"] = data_cfg.augment
        try:
            training = TrainConfig.from_dict(training_section)
        except TypeError as e:
            raise ConfigError(f"training section: {e}") from e
        training.validate()

        resolved_threads = resolve_threads(threads, data["global"].get("threads"))
        return RunConfig(network=network, training=training, data=data_cfg,
                         threads=resolved_threads, preset=preset_name)

    def show_current_config(self) -> str:
        """
        Display current configuration (merged from all sources) as YAML.

        :return: YAML string of the resolved configuration
        """
        return self.resolve().to_yaml()
