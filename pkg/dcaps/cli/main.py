"""Click-based CLI dispatcher for dcaps.

Subcommand structure:

    dcaps gen-toy --out DIR ...          Write the seeded synthetic dataset
    dcaps train --manifest M --out DIR   Train one network (no cross validation)
    dcaps crossval --exp N --out DIR     Stratified k-fold cross validation
    dcaps eval --checkpoint C --out DIR  Score a manifest with a checkpoint
    dcaps gradcheck [--json]             Finite-difference gradient suite
    dcaps ablate routing|recon ...       Routing / reconstruction sweeps
    dcaps config show                    Show merged config
    dcaps version                        Print version

Each subcommand lives in its own module under ``dcaps/cli/``; helpers
used by several of them are in ``dcaps/cli/_shared.py``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path
from typing import Any

import click

from dcaps.cli._shared import config_options, console, err_console, resolve_run_config
from dcaps.cli.ablate import ablate
from dcaps.cli.crossval import crossval
from dcaps.cli.eval import eval_cmd
from dcaps.cli.gen_toy import gen_toy
from dcaps.cli.gradcheck import gradcheck
from dcaps.cli.train import train
from dcaps.core.errors import EXIT_USAGE, DCapsError


def _read_version() -> str:
    """Resolve the dcaps version.

    Prefer the VERSION file at the project root; fall back to
    importlib.metadata when it is absent (a bare wheel install).
    """
    try:
        version_file = Path(__file__).resolve().parent.parent.parent / "VERSION"
        return version_file.read_text().strip()
    except Exception:
        pass

    try:
        from importlib.metadata import version
        return version("dcaps")
    except Exception:
        return "unknown"


DCAPS_VERSION = _read_version()


class DCapsGroup(click.Group):
    """Root group that maps every failure to the documented exit code."""

    def main(self, *args: Any, standalone_mode: bool = True, **kwargs: Any) -> Any:
        if not standalone_mode:
            return super().main(*args, standalone_mode=False, **kwargs)
        try:
            rv = super().main(*args, standalone_mode=False, **kwargs)
        except click.UsageError as e:
            e.show()
            sys.exit(EXIT_USAGE)
        except click.ClickException as e:
            e.show()
            sys.exit(e.exit_code)
        except click.Abort:
            err_console.print("Aborted!")
            sys.exit(EXIT_USAGE)
        except DCapsError as e:
            logging.getLogger("dcaps").debug("command failed", exc_info=True)
            err_console.print(f"[bold red]Error:[/bold red] {e}")
            sys.exit(e.exit_code)
        sys.exit(rv if isinstance(rv, int) else 0)


# ---------------------------------------------------------------------------
# Click root group
# ---------------------------------------------------------------------------


@click.group(
    cls=DCapsGroup,
    context_settings={"help_option_names": ["-h", "--help"]},
)
def cli() -> None:
    """dcaps: D-Caps capsule network training and evaluation"""
    pass


# ---------------------------------------------------------------------------
# version (small enough to live inline)
# ---------------------------------------------------------------------------


@cli.command()
def version() -> None:
    """Show dcaps version and exit."""
    console.print(f"[bold cyan]dcaps version {DCAPS_VERSION}[/bold cyan]")


# ---------------------------------------------------------------------------
# Subcommands defined in their own modules
# ---------------------------------------------------------------------------

cli.add_command(gen_toy)
cli.add_command(train)
cli.add_command(crossval)
cli.add_command(eval_cmd)
cli.add_command(gradcheck)
cli.add_command(ablate)


# ---------------------------------------------------------------------------
# config (small enough to live inline)
# ---------------------------------------------------------------------------


@cli.group(name="config")
def config_group() -> None:
    """Configuration management."""
    pass


@config_group.command(name="show")
@config_options
def config_show(config_path: str | None, set_overrides: tuple[str, ...], threads: int | None,
                verbose: bool) -> None:
    """Show the fully resolved configuration."""
    run_config = resolve_run_config(config_path, set_overrides, {}, threads=threads)
    console.print("[bold cyan]Current Configuration:[/bold cyan]")
    click.echo(run_config.to_yaml(), nl=False)
