"""Checkpoint files.

Layout::

    DCAPSCKPT1\\n
    <header length in bytes, decimal>\\n
    <header: UTF-8 JSON, sorted keys>
    <blob: little-endian float32, tensors back to back in index order>

The header holds ``format_version``, the full ``DCapsConfig`` dict and a
tensor index (``name``, ``shape``, ``dtype``, ``offset`` in bytes from the
start of the blob). Loading rebuilds the network from the stored config
and refuses any index that does not match it exactly.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any

import numpy as np

from dcaps.core.atomic import PathLike, write_bytes_atomic
from dcaps.core.errors import CheckpointError, ConfigError
from dcaps.network.config import DCapsConfig
from dcaps.network.model import DCapsNet, build

logger = logging.getLogger(__name__)

MAGIC = b"DCAPSCKPT1\n"
FORMAT_VERSION = 1
BLOB_DTYPE = np.dtype("<f4")


def encode_checkpoint(net: DCapsNet, extra: dict[str, Any] | None = None) -> bytes:
    index = []
    chunks = []
    offset = 0
    for p in net.parameters():
        data = np.ascontiguousarray(p.value.data, dtype=BLOB_DTYPE)
        index.append({"name": p.name, "shape": list(p.shape), "dtype": "float32", "offset": offset})
        chunks.append(data.tobytes())
        offset += data.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "config": net.config.to_dict(),
        "tensors": index,
    }
    if extra:
        header["extra"] = extra
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + f"{len(header_bytes)}\n".encode("ascii") + header_bytes + b"".join(chunks)


def save_checkpoint(net: DCapsNet, path: PathLike, extra: dict[str, Any] | None = None) -> Path:
    """Write ``net`` to ``path`` atomically; ``extra`` lands in the header verbatim."""
    path = Path(path)
    write_bytes_atomic(path, encode_checkpoint(net, extra))
    logger.debug("wrote checkpoint %s", path)
    return path


def read_header(payload: bytes) -> tuple[dict[str, Any], memoryview]:
    """Split a checkpoint into its parsed header and the raw blob."""
    if not payload.startswith(MAGIC):
        raise CheckpointError("not a dcaps checkpoint (bad magic line)")
    rest = payload[len(MAGIC):]
    newline = rest.find(b"\n")
    if newline < 0:
        raise CheckpointError("truncated checkpoint: missing header length")
    try:
        length = int(rest[:newline].decode("ascii"))
    except (UnicodeDecodeError, ValueError) as e:
        raise CheckpointError("malformed header length line") from e
    start = newline + 1
    raw = rest[start:start + length]
    if len(raw) != length:
        raise CheckpointError("truncated checkpoint: header shorter than declared")
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable checkpoint header: {e}") from e
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format_version {header.get('format_version')!r}"
        )
    return header, memoryview(rest)[start + length:]


def load_checkpoint(path: PathLike, expected_config: DCapsConfig | None = None,
                    dtype: np.dtype | type = np.float32) -> DCapsNet:
    """Rebuild the network stored at ``path``.

    :raises CheckpointError: bad framing, a config different from
        ``expected_config``, or a tensor index that does not match the
        network the stored config builds.
    """
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    header, blob = read_header(payload)
    try:
        config = DCapsConfig.from_dict(header["config"])
        config.validate()
    except (KeyError, ConfigError) as e:
        raise CheckpointError(f"{path}: invalid stored config: {e}") from e
    if expected_config is not None and config.to_dict() != expected_config.to_dict():
        raise CheckpointError(f"{path}: stored network config does not match the requested one")

    net = build(config, seed=0, dtype=dtype)
    params = net.parameters()
    index = header.get("tensors", [])
    if len(index) != len(params):
        raise CheckpointError(f"{path}: {len(index)} tensors stored, network has {len(params)}")
    for entry, p in zip(index, params, strict=True):
        if entry.get("name") != p.name or tuple(entry.get("shape", ())) != p.shape:
            raise CheckpointError(
                f"{path}: tensor {entry.get('name')!r} {entry.get('shape')} does not match "
                f"{p.name!r} {list(p.shape)}"
            )
        if entry.get("dtype") != "float32":
            raise CheckpointError(f"{path}: tensor {p.name!r} has unsupported dtype {entry.get('dtype')!r}")
        offset = int(entry["offset"])
        nbytes = p.size * BLOB_DTYPE.itemsize
        if offset < 0 or offset + nbytes > len(blob):
            raise CheckpointError(f"{path}: tensor {p.name!r} runs past the end of the blob")
        values = np.frombuffer(blob[offset:offset + nbytes], dtype=BLOB_DTYPE).reshape(p.shape)
        p.assign(values.astype(dtype))
    logger.debug("loaded checkpoint %s (%d parameters)", path, net.parameter_count())
    return net
