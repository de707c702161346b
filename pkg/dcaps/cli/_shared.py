"""Shared helpers for ``dcaps.cli.*`` subcommand modules.

Lives in its own module to avoid circular imports between
``dcaps.cli.main`` and the per-subcommand modules.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from pathlib import Path
from typing import Any

import click
from rich.console import Console

from dcaps.config_manager import ConfigManager, RunConfig
from dcaps.core.errors import ConfigError
from dcaps.core.runtime import resolve_output_dir
from dcaps.data.manifest import Manifest, load_manifest

console = Console()
err_console = Console(stderr=True)

LOG_NAME = "dcaps.log"


def setup_logging(log_dir: str | Path | None, verbose: bool) -> None:
    """Set up Rich-based logging plus a file handler in ``log_dir``."""
    from rich.logging import RichHandler

    handlers: list[logging.Handler] = [
        RichHandler(console=err_console, rich_tracebacks=True, show_time=False, show_path=False),
    ]
    if log_dir is not None:
        log_dir_p = Path(log_dir).expanduser()
        log_dir_p.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_dir_p / LOG_NAME, mode="w", encoding="utf-8"))
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=handlers,
        force=True,
    )


def config_options(func: Callable[..., Any]) -> Callable[..., Any]:
    """``--config``, ``--set``, ``--threads`` and ``-v``, shared by every run command."""
    func = click.option("-v", "--verbose", is_flag=True, help="Enable verbose logging.")(func)
    func = click.option("--threads", type=int, default=None,
                        help="Worker threads. Precedence: this flag > $DCAPS_THREADS > "
                             "global.threads in config > 1.")(func)
    func = click.option("--set", "set_overrides", multiple=True,
                        help="Override config value: --set section.key=value")(func)
    func = click.option("--config", "config_path", type=click.Path(),
                        help="Path to configuration file.")(func)
    return func


def resolve_run_config(config_path: str | None, set_overrides: tuple[str, ...] | list[str],
                       flags: dict[str, Any], threads: int | None = None) -> RunConfig:
    """Merge defaults, config file, ``--set`` and explicit flags into a ``RunConfig``."""
    log = logging.getLogger("dcaps")
    config_manager = ConfigManager(set_args=list(set_overrides), logger=log)
    config_manager.load(config_path)
    return config_manager.resolve(flags, threads=threads)


def prepare_output(out: str | None, run_config: RunConfig | None, verbose: bool) -> Path:
    """Create the output directory, start logging into it and record the run config."""
    out_dir = resolve_output_dir(out)
    setup_logging(out_dir, verbose)
    if run_config is not None:
        path = run_config.write(out_dir)
        logging.getLogger("dcaps").debug(f"Resolved configuration written to {path}")
    return out_dir


def require_manifest(run_config: RunConfig) -> Manifest:
    if not run_config.data.manifest:
        raise ConfigError("a manifest is required (--manifest or data.manifest in config)")
    return load_manifest(Path(run_config.data.manifest).expanduser())


def parse_size(value: str) -> tuple[int, int]:
    """``"64x80"`` → ``(64, 80)``."""
    try:
        height, width = (int(v) for v in value.lower().split("x"))
    except ValueError:
        raise click.BadParameter(f"expected HEIGHTxWIDTH, got {value!r}") from None
    return height, width


def parse_int_list(value: str) -> list[int]:
    """``"2,3,4,5"`` → ``[2, 3, 4, 5]``."""
    try:
        items = [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}") from None
    if not items:
        raise click.BadParameter("expected at least one integer")
    return items
