#!/usr/bin/env python3
"""dcaps: D-Caps training and evaluation.

Module entrypoint for ``python -m dcaps.main``. The CLI dispatch (Click
subcommands) lives in ``dcaps.cli``; this file is a thin shim.
"""

from dcaps.cli import main

if __name__ == "__main__":
    main()
