"""Architecture description for D-Caps networks.

``DCapsConfig`` is a frozen value: overrides (routing sweep, reconstruction
ablation) produce new instances through ``dataclasses.replace``. It
serializes to plain dicts of ints, floats, bools and lists, so it survives
JSON and YAML round trips exactly and doubles as the checkpoint header.

Three factories ship:

- ``full_size_config()``  512×640 input, the parameter-budget reference.
- ``desk_config()``       the same layer stack at 64×80, used for training on
                          the synthetic dataset.
- ``toy_config()``        64×80 with three capsule layers, for fast tests.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any

from dcaps.capsule_layers import ConvCapsuleSpec
from dcaps.core.errors import ConfigError
from dcaps.numerics.ops import output_extent

OUTPUT_ATOMS = 16
RECON_UPSAMPLE = 4  # two stride-2 transposed convolutions


@dataclass(frozen=True)
class ConvSpec:
    """Initial convolution: ``kernel×kernel``, ``stride``, ``channels`` out, ReLU."""

    kernel: int = 5
    stride: int = 2
    channels: int = 16

    def to_dict(self) -> dict[str, int]:
        return {"kernel": self.kernel, "stride": self.stride, "channels": self.channels}


@dataclass(frozen=True)
class ReconSpec:
    """Reconstruction decoder shape.

    dense → ``ceil(H/4)×ceil(W/4)×grid_channels`` → two stride-2 transposed
    convolutions (``kernel``, ``hidden_channels``) → 1×1 conv to 3 channels.
    """

    grid_channels: int = 1
    hidden_channels: int = 16
    kernel: int = 4

    def to_dict(self) -> dict[str, int]:
        return {
            "grid_channels": self.grid_channels,
            "hidden_channels": self.hidden_channels,
            "kernel": self.kernel,
        }


@dataclass(frozen=True)
class DCapsConfig:
    input_shape: tuple[int, int, int] = (64, 80, 3)
    initial_conv: ConvSpec = field(default_factory=ConvSpec)
    layer_specs: tuple[ConvCapsuleSpec, ...] = ()
    output_atoms: int = OUTPUT_ATOMS
    num_classes: int = 1
    recon_weight: float = 0.1
    recon_enabled: bool = True
    recon: ReconSpec = field(default_factory=ReconSpec)

    # -- derived -------------------------------------------------------------

    @property
    def layer_names(self) -> list[str]:
        return ["primary_caps"] + [f"caps{i + 2}" for i in range(len(self.layer_specs) - 1)]

    @property
    def recon_grid(self) -> tuple[int, int, int]:
        h, w, _ = self.input_shape
        return (math.ceil(h / RECON_UPSAMPLE), math.ceil(w / RECON_UPSAMPLE), self.recon.grid_channels)

    def grid_extents(self) -> list[tuple[int, int]]:
        """Spatial extents after the initial conv and after every capsule layer."""
        h, w, _ = self.input_shape
        h = output_extent(h, self.initial_conv.kernel, self.initial_conv.stride, "same")
        w = output_extent(w, self.initial_conv.kernel, self.initial_conv.stride, "same")
        extents = [(h, w)]
        for spec in self.layer_specs:
            h = output_extent(h, spec.kernel, spec.stride, "same")
            w = output_extent(w, spec.kernel, spec.stride, "same")
            extents.append((h, w))
        return extents

    # -- validation ----------------------------------------------------------

    def validate(self) -> None:
        """Check layer chaining and value ranges.

        :raises ConfigError: naming the first offending layer or field.
        """
        if len(self.input_shape) != 3 or self.input_shape[2] != 3 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be H×W×3 with H, W >= 1, got {self.input_shape}")
        conv = self.initial_conv
        if conv.kernel < 1 or conv.stride < 1 or conv.channels < 1:
            raise ConfigError(f"initial_conv: kernel, stride and channels must be >= 1, got {conv}")
        if not self.layer_specs:
            raise ConfigError("layer_specs: at least one capsule layer is required")
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.output_atoms < 1:
            raise ConfigError(f"output_atoms must be >= 1, got {self.output_atoms}")
        if not math.isfinite(self.recon_weight) or self.recon_weight < 0:
            raise ConfigError(f"recon_weight must be a finite value >= 0, got {self.recon_weight}")
        r = self.recon
        if r.grid_channels < 1 or r.hidden_channels < 1 or r.kernel < 2:
            raise ConfigError(f"recon: channels must be >= 1 and kernel >= 2, got {r}")

        prev_types, prev_atoms = 1, conv.channels
        for name, spec in zip(self.layer_names, self.layer_specs, strict=True):
            spec.validate(name)
            if spec.in_types != prev_types:
                raise ConfigError(
                    f"{name}: in_types {spec.in_types} does not match the {prev_types} "
                    f"capsule type(s) produced by the previous layer"
                )
            if spec.in_atoms != prev_atoms:
                raise ConfigError(
                    f"{name}: in_atoms {spec.in_atoms} does not match the previous "
                    f"layer's {prev_atoms} atoms"
                )
            prev_types, prev_atoms = spec.out_types, spec.out_atoms

        last = self.layer_names[-1]
        if prev_types != self.num_classes:
            raise ConfigError(
                f"{last}: out_types {prev_types} must equal num_classes {self.num_classes}"
            )
        if prev_atoms != self.output_atoms:
            raise ConfigError(
                f"{last}: out_atoms {prev_atoms} must equal output_atoms {self.output_atoms}"
            )

    # -- overrides -----------------------------------------------------------

    def with_routing(self, iterations: int) -> DCapsConfig:
        """Set routing iterations on every layer that routes among several child types.

        Layers fed by a single capsule type keep ``r = 1``.
        """
        if iterations < 1:
            raise ConfigError(f"routing iterations must be >= 1, got {iterations}")
        specs = tuple(
            dataclasses.replace(s, routing_iterations=iterations) if s.in_types > 1 else s
            for s in self.layer_specs
        )
        return dataclasses.replace(self, layer_specs=specs)

    def with_recon(self, enabled: bool, weight: float | None = None) -> DCapsConfig:
        return dataclasses.replace(
            self,
            recon_enabled=enabled,
            recon_weight=self.recon_weight if weight is None else float(weight),
        )

    def with_input_shape(self, height: int, width: int) -> DCapsConfig:
        return dataclasses.replace(self, input_shape=(int(height), int(width), 3))

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "input_shape": list(self.input_shape),
            "initial_conv": self.initial_conv.to_dict(),
            "layer_specs": [s.to_dict() for s in self.layer_specs],
            "output_atoms": self.output_atoms,
            "num_classes": self.num_classes,
            "recon_weight": self.recon_weight,
            "recon_enabled": self.recon_enabled,
            "recon": self.recon.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> DCapsConfig:
        """Inverse of ``to_dict``; missing keys take the dataclass defaults.

        :raises ConfigError: unknown keys or malformed sub-sections.
        """
        if not isinstance(data, dict):
            raise ConfigError(f"network config must be a mapping, got {type(data).__name__}")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown network config key(s): {', '.join(unknown)}")
        kwargs: dict[str, Any] = {}
        try:
            if "input_shape" in data:
                kwargs["input_shape"] = tuple(int(v) for v in data["input_shape"])
            if "initial_conv" in data:
                kwargs["initial_conv"] = ConvSpec(**data["initial_conv"])
            if "layer_specs" in data:
                kwargs["layer_specs"] = tuple(ConvCapsuleSpec(**s) for s in data["layer_specs"])
            if "recon" in data:
                kwargs["recon"] = ReconSpec(**data["recon"])
        except (TypeError, ValueError) as e:
            raise ConfigError(f"malformed network config: {e}") from e
        for key in ("output_atoms", "num_classes"):
            if key in data:
                kwargs[key] = int(data[key])
        if "recon_weight" in data:
            kwargs["recon_weight"] = float(data["recon_weight"])
        if "recon_enabled" in data:
            kwargs["recon_enabled"] = bool(data["recon_enabled"])
        return cls(**kwargs)


def _capsule_stack(kernel: int, atoms: int, types: list[int], output_atoms: int,
                   routing: int = 3, in_atoms: int = 16) -> tuple[ConvCapsuleSpec, ...]:
    """Chain ``1 → types[0] → types[1] → …`` with ``r = 1`` on single-type inputs."""
    specs = []
    prev_types, prev_atoms = 1, in_atoms
    for i, out_types in enumerate(types):
        out_atoms = output_atoms if i == len(types) - 1 else atoms
        specs.append(ConvCapsuleSpec(
            kernel=kernel, stride=2, in_types=prev_types, out_types=out_types,
            in_atoms=prev_atoms, out_atoms=out_atoms,
            routing_iterations=1 if prev_types == 1 else routing,
        ))
        prev_types, prev_atoms = out_types, out_atoms
    return tuple(specs)


def full_size_config(num_classes: int = 1) -> DCapsConfig:
    """512×640 input; about 1.19 million parameters."""
    return DCapsConfig(
        input_shape=(512, 640, 3),
        initial_conv=ConvSpec(kernel=5, stride=2, channels=16),
        layer_specs=_capsule_stack(5, 16, [2, 4, 4, 8, 8, num_classes], OUTPUT_ATOMS),
        num_classes=num_classes,
        recon=ReconSpec(grid_channels=1, hidden_channels=16, kernel=4),
    )


def desk_config(num_classes: int = 1) -> DCapsConfig:
    return full_size_config(num_classes).with_input_shape(64, 80)


def toy_config(num_classes: int = 1) -> DCapsConfig:
    """64×80, 8-channel stem, three capsule layers."""
    return DCapsConfig(
        input_shape=(64, 80, 3),
        initial_conv=ConvSpec(kernel=5, stride=2, channels=8),
        layer_specs=_capsule_stack(5, 8, [2, 2, num_classes], OUTPUT_ATOMS, in_atoms=8),
        num_classes=num_classes,
        recon=ReconSpec(grid_channels=1, hidden_channels=8, kernel=4),
    )


def tiny_config(height: int = 8, width: int = 10, num_classes: int = 1,
                routing: int = 3) -> DCapsConfig:
    """Small enough for end-to-end finite differences."""
    return DCapsConfig(
        input_shape=(height, width, 3),
        initial_conv=ConvSpec(kernel=3, stride=2, channels=4),
        layer_specs=_capsule_stack(3, 4, [2, num_classes], 4, routing=routing, in_atoms=4),
        output_atoms=4,
        num_classes=num_classes,
        recon=ReconSpec(grid_channels=1, hidden_channels=2, kernel=4),
    )


PRESETS = {
    "full": full_size_config,
    "desk": desk_config,
    "toy": toy_config,
    "tiny": tiny_config,
}


def preset(name: str, num_classes: int = 1) -> DCapsConfig:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown network preset {name!r}; expected one of {sorted(PRESETS)}") from None
    return factory(num_classes=num_classes)
