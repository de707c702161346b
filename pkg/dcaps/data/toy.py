"""Seeded synthetic "toy polyp" dataset.

Every polyp is a blob on a textured mucosa-like background. Negative
(hyperplastic) polyps have a smooth low-harmonic outline and smooth
shading; positive ones add a serrated outline and a fine surface texture,
so they carry more high-frequency energy (see ``boundary_frequency``).

Per image the generator varies rotation, scale (0.7–1.3), brightness
(0.6–1.4) and background clutter. About half of the polyps come from a
dual-focus scope: their first images take distinct NBI/WL × near/far
modes, any further images are untagged standard-scope shots.
"""

from __future__ import annotations

import io
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from dcaps.core.atomic import write_bytes_atomic
from dcaps.core.errors import ConfigError
from dcaps.data.manifest import Device, Focus, Label, Light, SampleRecord, write_manifest

logger = logging.getLogger(__name__)

POSITIVE_MODES = ("adenoma", "serrated", "mixed")
DUAL_FOCUS_MODES = (
    (Light.NBI, Focus.NEAR),
    (Light.NBI, Focus.FAR),
    (Light.WL, Focus.NEAR),
    (Light.WL, Focus.FAR),
)
MANIFEST_NAME = "manifest.csv"

# (polyp RGB, background RGB) per light mode
_PALETTE = {
    Light.WL: ((0.86, 0.48, 0.46), (0.74, 0.36, 0.30)),
    Light.NBI: ((0.46, 0.36, 0.24), (0.32, 0.48, 0.42)),
    Light.NONE: ((0.86, 0.48, 0.46), (0.74, 0.36, 0.30)),
}
_FOCUS_SCALE = {Focus.NEAR: 1.15, Focus.FAR: 0.85, Focus.NONE: 1.0}


@dataclass(frozen=True)
class PolypShape:
    """Per-polyp latent shape, shared by all of its images."""

    positive: bool
    radius: float
    harmonics: tuple[tuple[float, float], ...]
    teeth: int
    serration: float
    tint: tuple[float, float, float]
    texture_period: float


@dataclass
class ToyDataset:
    records: list[SampleRecord] = field(default_factory=list)
    images: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)


def _draw_shape(rng: np.random.Generator, positive: bool) -> PolypShape:
    harmonics = tuple((float(rng.uniform(0.03, 0.08)), float(rng.uniform(0, 2 * np.pi))) for _ in (2, 3))
    return PolypShape(
        positive=positive,
        radius=float(rng.uniform(0.22, 0.30)),
        harmonics=harmonics,
        teeth=int(rng.integers(12, 19)),
        serration=float(rng.uniform(0.10, 0.16)) if positive else 0.0,
        tint=tuple(float(t) for t in rng.uniform(-0.05, 0.05, size=3)),
        texture_period=float(rng.uniform(2.5, 3.5)),
    )


def _background(rng: np.random.Generator, height: int, width: int, color: np.ndarray) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    angle = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(angle) * xx / width + np.sin(angle) * yy / height)
    shade = 0.85 + 0.15 * ramp
    clutter = np.zeros((height, width))
    for _ in range(int(rng.integers(3, 7))):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        sigma = rng.uniform(2.0, 6.0)
        amp = rng.uniform(-0.15, 0.15)
        clutter += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
    return color[None, None, :] * (shade + clutter)[..., None]


def render_polyp(rng: np.random.Generator, shape: PolypShape, height: int, width: int,
                 light: Light = Light.NONE, focus: Focus = Focus.NONE) -> np.ndarray:
    """One ``height×width×3`` uint8 image of ``shape``."""
    polyp_rgb, bg_rgb = (np.array(c) for c in _PALETTE[light])
    polyp_rgb = np.clip(polyp_rgb + np.array(shape.tint), 0, 1)

    rotation = rng.uniform(0, 2 * np.pi)
    scale = float(np.clip(rng.uniform(0.7, 1.3) * _FOCUS_SCALE[focus], 0.7, 1.3))
    brightness = rng.uniform(0.6, 1.4)
    cy = height / 2 + rng.uniform(-0.1, 0.1) * height
    cx = width / 2 + rng.uniform(-0.1, 0.1) * width

    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    dist = np.hypot(dy, dx)
    theta = np.arctan2(dy, dx) + rotation

    outline = np.ones_like(theta)
    for k, (amp, phase) in zip((2, 3), shape.harmonics, strict=True):
        outline += amp * np.cos(k * theta + phase)
    if shape.positive:
        outline += shape.serration * np.cos(shape.teeth * theta)
    edge = shape.radius * min(height, width) * scale * outline
    alpha = np.clip(edge - dist + 0.5, 0.0, 1.0)

    body = 1.0 - 0.35 * np.clip(dist / np.maximum(edge, 1e-6), 0, 1) ** 2
    if shape.positive:
        wave = 2 * np.pi / shape.texture_period
        u = np.cos(rotation) * xx + np.sin(rotation) * yy
        v = -np.sin(rotation) * xx + np.cos(rotation) * yy
        body = body + 0.12 * np.sin(wave * u) * np.sin(wave * v)
    polyp = polyp_rgb[None, None, :] * body[..., None]

    background = _background(rng, height, width, bg_rgb)
    image = background * (1 - alpha[..., None]) + polyp * alpha[..., None]
    image = image * brightness + rng.normal(0.0, 0.01, size=image.shape)
    return np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)


def _positive_label(mode: str, k: int) -> Label:
    if mode == "adenoma":
        return Label.ADENOMA
    if mode == "serrated":
        return Label.SERRATED
    return Label.ADENOMA if k % 2 == 0 else Label.SERRATED


def generate_toy_dataset(n_polyps: int, images_per_polyp: int, seed: int,
                         size: tuple[int, int] = (64, 80), positive: str = "mixed") -> ToyDataset:
    """Generate records plus uint8 pixels, deterministic in ``seed``.

    Half of the polyps (rounded down) are positive. Positives are labelled
    per ``positive``: ``adenoma``, ``serrated``, or ``mixed`` (alternating).

    :raises ConfigError: fewer than 4 polyps, fewer than 1 image per polyp,
        or an unknown ``positive`` mode.
    """
    if n_polyps < 4:
        raise ConfigError(f"need at least 4 polyps, got {n_polyps}")
    if images_per_polyp < 1:
        raise ConfigError(f"need at least 1 image per polyp, got {images_per_polyp}")
    if positive not in POSITIVE_MODES:
        raise ConfigError(f"positive must be one of {', '.join(POSITIVE_MODES)}; got {positive!r}")
    height, width = size
    if height < 8 or width < 8:
        raise ConfigError(f"image size must be at least 8×8, got {height}×{width}")

    rng = np.random.default_rng(seed)
    classes = rng.permutation(np.arange(n_polyps) % 2)
    dataset = ToyDataset()
    positives_seen = 0
    for i, cls in enumerate(classes):
        is_positive = bool(cls)
        if is_positive:
            label = _positive_label(positive, positives_seen)
            positives_seen += 1
        else:
            label = Label.HYPERPLASTIC
        shape = _draw_shape(rng, is_positive)
        dual_focus = bool(rng.random() < 0.5)
        modes = [DUAL_FOCUS_MODES[j] for j in rng.permutation(len(DUAL_FOCUS_MODES))]
        polyp_id = f"polyp{i:03d}"
        for j in range(images_per_polyp):
            if dual_focus and j < len(modes):
                device, (light, focus) = Device.DUAL_FOCUS, modes[j]
            else:
                device, light, focus = Device.STANDARD, Light.NONE, Focus.NONE
            dataset.records.append(SampleRecord(
                image_path=f"images/{polyp_id}_{j}.png",
                polyp_id=polyp_id,
                patient_id=f"patient{i:03d}",
                label=label,
                device=device,
                light=light,
                focus=focus,
            ))
            dataset.images.append(render_polyp(rng, shape, height, width, light, focus))
    return dataset


def encode_png(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def write_toy_dataset(out_dir: str | Path, dataset: ToyDataset) -> Path:
    """Write PNGs under ``out_dir/images`` plus ``out_dir/manifest.csv``; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    for record, pixels in zip(dataset.records, dataset.images, strict=True):
        write_bytes_atomic(out_dir / record.image_path, encode_png(pixels))
    manifest_path = out_dir / MANIFEST_NAME
    write_manifest(manifest_path, dataset.records)
    logger.info("wrote %d toy images (%d polyps) to %s", len(dataset),
                len({r.polyp_id for r in dataset.records}), out_dir)
    return manifest_path


def boundary_frequency(image: np.ndarray) -> float:
    """Mean absolute 4-neighbour Laplacian of the grayscale image, in [0, 1] units."""
    pixels = np.asarray(image, dtype=np.float64)
    if pixels.max(initial=0.0) > 1.0:
        pixels = pixels / 255.0
    gray = pixels.mean(axis=-1) if pixels.ndim == 3 else pixels
    lap = (4 * gray[1:-1, 1:-1] - gray[:-2, 1:-1] - gray[2:, 1:-1]
           - gray[1:-1, :-2] - gray[1:-1, 2:])
    return float(np.mean(np.abs(lap)))


def class_frequency_means(dataset: ToyDataset, labels: Sequence[int] | None = None) -> dict[int, float]:
    """Mean ``boundary_frequency`` per class (0 = hyperplastic, 1 = premalignant)."""
    if labels is None:
        labels = [0 if r.label is Label.HYPERPLASTIC else 1 for r in dataset.records]
    sums: dict[int, list[float]] = {}
    for y, img in zip(labels, dataset.images, strict=True):
        sums.setdefault(int(y), []).append(boundary_frequency(img))
    return {y: float(np.mean(v)) for y, v in sorted(sums.items())}
