"""Atomic file writes for every dcaps output.

Reports, vote dumps and checkpoints must never be observed half written
(a second ``dcaps eval`` may read a checkpoint while a fold is still
training). Everything goes to ``<path>.tmp`` first and is then
``os.replace``\\d into place; a POSIX rename(2) is atomic.

JSON defaults to ``sort_keys=True`` and a trailing newline so that two runs
with identical inputs produce byte-identical files.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Union

PathLike = Union[str, "os.PathLike[str]"]


def write_bytes_atomic(path: PathLike, payload: bytes) -> None:
    """Write ``payload`` to ``path`` atomically.

    :raises OSError: If the file cannot be written or replaced. The
        temporary file is removed (best-effort) on failure.
    """
    path = Path(path)
    tmp = Path(f"{path}.tmp")
    try:
        with open(tmp, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except Exception:
        try:
            tmp.unlink()
        except (FileNotFoundError, OSError):
            pass
        raise


def write_text_atomic(path: PathLike, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


def write_json_atomic(path: PathLike, data: Any, **dump_kwargs: Any) -> None:
    """Write ``data`` as JSON to ``path`` atomically.

    :param dump_kwargs: Additional kwargs for :func:`json.dumps`. ``indent=2``
        and ``sort_keys=True`` are the defaults.

    :raises TypeError, ValueError: If ``data`` is not JSON-serializable
        (nothing is written in that case, the existing file is untouched).
    :raises OSError: If the file cannot be written or replaced.
    """
    dump_kwargs.setdefault("indent", 2)
    dump_kwargs.setdefault("sort_keys", True)
    text = json.dumps(data, **dump_kwargs) + "\n"
    write_text_atomic(path, text)
