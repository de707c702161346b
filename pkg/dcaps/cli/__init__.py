"""dcaps CLI entry point.

Defines ``main()``, the console-script target, which invokes the Click
dispatcher in ``dcaps.cli.main``.
"""

from __future__ import annotations


def main() -> None:
    """Entry point for the ``dcaps`` console script."""
    # Local import: the Click app pulls in numpy and every subcommand, so
    # deferring keeps ``import dcaps.cli`` cheap.
    from dcaps.cli.main import cli

    cli(prog_name="dcaps")
