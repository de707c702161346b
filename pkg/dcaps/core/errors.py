"""Exception vocabulary for dcaps.

Every error the library raises on purpose derives from ``DCapsError`` and
carries the CLI exit code it maps to, so the click root group can translate
any of them in one place:

- ``ConfigError``     → 1 (same code as a click usage error)
- ``DataError``       → 2 (manifest, images, checkpoints, shapes)
- ``NumericalError``  → 3 (non-finite loss or gradient)
"""

from __future__ import annotations

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class DCapsError(RuntimeError):
    """Base class for every deliberate dcaps failure."""

    exit_code = EXIT_USAGE


class ConfigError(DCapsError):
    """Inconsistent configuration (layer chaining, routing < 1, bad keys)."""

    exit_code = EXIT_USAGE


class DataError(DCapsError):
    """Input data could not be read or violates an invariant."""

    exit_code = EXIT_DATA


class DimensionError(DataError, ValueError):
    """Tensor shapes do not line up for the requested operation."""


class ManifestError(DataError):
    """A manifest row is malformed; ``line`` is 1-based, header is line 1."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class CheckpointError(DataError):
    """Checkpoint header or tensor index does not match the expected network."""


class NumericalError(DCapsError):
    """A loss or gradient went non-finite."""

    exit_code = EXIT_NUMERICAL
