"""Image decoding, resizing and augmentation.

Decoding goes through Pillow; resizing is a numpy bilinear interpolation
with half-pixel centers and edge clamping, so results do not depend on the
Pillow version.
"""

from __future__ import annotations

import io
import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from dcaps.core.errors import DataError

logger = logging.getLogger(__name__)


def decode_image(payload: bytes) -> np.ndarray:
    """Decode to ``H×W×3`` uint8 RGB.

    :raises DataError: undecodable bytes.
    """
    try:
        with Image.open(io.BytesIO(payload)) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as e:
        raise DataError(f"cannot decode image: {e}") from e


def _axis_weights(src: int, dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    coords = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    coords = np.clip(coords, 0.0, src - 1)
    lo = np.floor(coords).astype(int)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, coords - lo


def resize_bilinear(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of an ``H×W×C`` float image to ``height×width×C``."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    if (h, w) == (height, width):
        return image.copy()
    r0, r1, fr = _axis_weights(h, height)
    c0, c1, fc = _axis_weights(w, width)
    fr = fr[:, None, None]
    fc = fc[None, :, None]
    top = image[r0][:, c0] * (1 - fc) + image[r0][:, c1] * fc
    bottom = image[r1][:, c0] * (1 - fc) + image[r1][:, c1] * fc
    return top * (1 - fr) + bottom * fr


def preprocess(payload: bytes, target: tuple[int, int]) -> np.ndarray:
    """Decode, scale to ``[0, 1]`` and resize to ``target`` (H, W); float64 ``H×W×3``."""
    pixels = decode_image(payload).astype(np.float64) / 255.0
    return resize_bilinear(pixels, *target)


def load_image(path: str | Path, target: tuple[int, int]) -> np.ndarray:
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read image {path}: {e}") from e
    try:
        return preprocess(payload, target)
    except DataError as e:
        raise DataError(f"{path}: {e}") from e


def load_images(paths: Sequence[str | Path], target: tuple[int, int], workers: int = 1,
                dtype: np.dtype | type = np.float32) -> np.ndarray:
    """Stack preprocessed images into ``N×H×W×3``; decoding may run on ``workers`` threads."""
    if workers > 1 and len(paths) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            images = list(pool.map(lambda p: load_image(p, target), paths))
    else:
        images = [load_image(p, target) for p in paths]
    if not images:
        return np.zeros((0, target[0], target[1], 3), dtype=dtype)
    return np.stack(images).astype(dtype)


def augment_batch(batch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random flips and rotations per image.

    Square images get any multiple of 90°; others only 0° or 180°, so the
    shape never changes.
    """
    out = np.empty_like(batch)
    square = batch.shape[1] == batch.shape[2]
    for i, img in enumerate(batch):
        if rng.random() < 0.5:
            img = img[:, ::-1]
        if rng.random() < 0.5:
            img = img[::-1, :]
        turns = int(rng.integers(4)) if square else 2 * int(rng.integers(2))
        out[i] = np.rot90(img, k=turns, axes=(0, 1))
    return out
