"""Resolution of runtime knobs with CLI/env/config overrides.

The worker-thread cap bounds how many cross-validation folds train at the
same time. It defaults to 1 so that every command is reproducible
byte-for-byte out of the box.

Precedence (highest first):
1. Explicit CLI argument
2. ``DCAPS_THREADS`` environment variable
3. ``global.threads`` in the first dcaps config file found
4. ``1`` (default)
"""

from __future__ import annotations

import logging
import os
from pathlib import Path

import yaml

from dcaps.core.errors import ConfigError

logger = logging.getLogger(__name__)

_DEFAULT_THREADS = 1

CONFIG_SEARCH_PATHS = [
    Path("./dcaps_config.yaml"),
    Path.home() / ".config" / "dcaps" / "config.yaml",
]


def _from_config_files() -> int | None:
    for path in CONFIG_SEARCH_PATHS:
        try:
            path = path.expanduser()
            if not path.exists():
                continue
            with open(path) as f:
                data = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError):
            continue
        if not isinstance(data, dict):
            continue
        global_section = data.get("global") or {}
        if not isinstance(global_section, dict):
            continue
        value = global_section.get("threads")
        if value:
            return int(value)
    return None


def resolve_threads(cli_arg: int | None = None, config_value: object = None) -> int:
    """Return the worker-thread cap, honoring CLI / env / config / default.

    ``config_value`` is ``global.threads`` from an already merged config;
    without it the config files are searched directly.
    """
    if cli_arg is not None:
        raw: object = cli_arg
    elif os.environ.get("DCAPS_THREADS"):
        raw = os.environ["DCAPS_THREADS"]
    elif config_value is not None:
        raw = config_value
    else:
        raw = _from_config_files() or _DEFAULT_THREADS
    try:
        threads = int(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"thread count (DCAPS_THREADS / global.threads) must be an integer, got {raw!r}") from e
    if threads < 1:
        raise ConfigError(f"thread count must be >= 1, got {threads}")
    return threads


def resolve_output_dir(cli_arg: str | None) -> Path:
    """Expand ``~`` and ``$VAR`` in an output directory and create it."""
    if not cli_arg:
        raise ConfigError("an output directory (--out) is required")
    path = Path(os.path.expandvars(cli_arg)).expanduser()
    path.mkdir(parents=True, exist_ok=True)
    return path
