"""Convolutional capsule layers with locally-constrained dynamic routing.

Capsule grids are batched: ``activations`` has shape ``B×h×w×n×a`` (n
capsule types, each an h×w grid of a-dimensional vectors), so a grid is a
reshape of a channels-last feature map and vice versa.

A convolutional capsule layer forms one prediction vector per child capsule
inside the kernel window centred on every parent location. Transformation
matrices are indexed by (child type, window offset) and shared across all
spatial positions. Routing then runs independently at every parent
location: coupling logits start at zero, couplings are a softmax over the
parent types, and the logits grow with the agreement ``û · v`` between each
prediction and the squashed parent.

Border windows are zero padded; the absent children contribute zero
predictions but still take part in the coupling softmax.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from dcaps.core.errors import ConfigError, DimensionError
from dcaps.numerics.ops import einsum, extract_patches, l2norm, softmax, squash
from dcaps.numerics.tensor import Parameter, Tensor, as_tensor

logger = logging.getLogger(__name__)


@dataclass
class CapsuleGrid:
    """Spatial grid of capsule vectors, ``B×h×w×n×a``."""

    activations: Tensor

    def __post_init__(self) -> None:
        self.activations = as_tensor(self.activations)
        if self.activations.ndim != 5:
            raise DimensionError(
                f"capsule grid must be B×h×w×n×a, got shape {self.activations.shape}"
            )
        if min(self.activations.shape[1:]) < 1:
            raise DimensionError(f"capsule grid extents must be >= 1, got {self.activations.shape}")

    @classmethod
    def from_feature_map(cls, features: Tensor) -> CapsuleGrid:
        """View a ``B×H×W×C`` map as a single capsule type with ``C`` atoms."""
        b, h, w, c = features.shape
        return cls(features.reshape(b, h, w, 1, c))

    @property
    def batch(self) -> int:
        return self.activations.shape[0]

    @property
    def height(self) -> int:
        return self.activations.shape[1]

    @property
    def width(self) -> int:
        return self.activations.shape[2]

    @property
    def num_types(self) -> int:
        return self.activations.shape[3]

    @property
    def atom_dim(self) -> int:
        return self.activations.shape[4]


@dataclass(frozen=True)
class ConvCapsuleSpec:
    kernel: int
    stride: int
    in_types: int
    out_types: int
    in_atoms: int
    out_atoms: int
    routing_iterations: int = 3

    def validate(self, where: str = "capsule layer") -> None:
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"{where}: kernel must be an odd integer >= 1, got {self.kernel}")
        if self.stride < 1:
            raise ConfigError(f"{where}: stride must be >= 1, got {self.stride}")
        for name in ("in_types", "out_types", "in_atoms", "out_atoms"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{where}: {name} must be >= 1, got {getattr(self, name)}")
        if self.routing_iterations < 1:
            raise ConfigError(
                f"{where}: routing_iterations must be >= 1, got {self.routing_iterations}"
            )

    @property
    def window(self) -> int:
        """Children per parent location: ``in_types · kernel²``."""
        return self.in_types * self.kernel * self.kernel

    @property
    def transform_shape(self) -> tuple[int, ...]:
        return (self.in_types, self.kernel, self.kernel, self.in_atoms, self.out_types * self.out_atoms)

    @property
    def bias_shape(self) -> tuple[int, int]:
        return (self.out_types, self.out_atoms)

    def to_dict(self) -> dict[str, int]:
        return {
            "kernel": self.kernel,
            "stride": self.stride,
            "in_types": self.in_types,
            "out_types": self.out_types,
            "in_atoms": self.in_atoms,
            "out_atoms": self.out_atoms,
            "routing_iterations": self.routing_iterations,
        }


@dataclass
class RoutingState:
    """Logits and couplings of one routing iteration, ``B×H×W×N×T`` each."""

    logits: np.ndarray
    couplings: np.ndarray = field(repr=False)


def _as_value(p: Parameter | Tensor) -> Tensor:
    return p.value if isinstance(p, Parameter) else as_tensor(p)


def form_predictions(children: CapsuleGrid, spec: ConvCapsuleSpec,
                     transforms: Parameter | Tensor) -> Tensor:
    """Prediction vectors ``û`` for every parent location.

    Returns ``B×H'×W'×N×T×A`` with ``N = in_types·kernel²`` children ordered
    (type, row offset, column offset) and ``T×A`` the parent types and atoms.
    """
    if children.num_types != spec.in_types or children.atom_dim != spec.in_atoms:
        raise DimensionError(
            f"children have {children.num_types} types × {children.atom_dim} atoms, "
            f"layer expects {spec.in_types} × {spec.in_atoms}"
        )
    w = _as_value(transforms)
    if w.shape != spec.transform_shape:
        raise DimensionError(f"transform shape {w.shape} != expected {spec.transform_shape}")

    b, h, wd, n, a = children.activations.shape
    k = spec.kernel
    flat = children.activations.reshape(b, h, wd, n * a)
    patches = extract_patches(flat, k, stride=spec.stride, padding="same")
    ho, wo = patches.shape[1:3]
    windows = patches.reshape(b, ho, wo, k, k, n, a)
    votes = einsum("bhwyxia,iyxao->bhwiyxo", windows, w)
    return votes.reshape(b, ho, wo, n * k * k, spec.out_types, spec.out_atoms)


def dynamic_route(predictions: Tensor, iterations: int, bias: Parameter | Tensor | None = None,
                  trace: list[RoutingState] | None = None) -> CapsuleGrid:
    """Route children to parent types at each location; returns the squashed parents.

    ``bias`` (``T×A``) is added to every parent pre-activation before the
    squash. When ``trace`` is given, the logits and couplings of every
    iteration are appended to it.
    """
    if iterations < 1:
        raise ConfigError(f"routing iterations must be >= 1, got {iterations}")
    u = as_tensor(predictions)
    if u.ndim != 6:
        raise DimensionError(f"predictions must be B×H×W×N×T×A, got shape {u.shape}")
    bias_t = _as_value(bias) if bias is not None else None

    logits = Tensor(np.zeros(u.shape[:5], dtype=u.dtype))
    parents = None
    for it in range(iterations):
        couplings = softmax(logits, axis=-1)
        if trace is not None:
            trace.append(RoutingState(logits=logits.data.copy(), couplings=couplings.data.copy()))
        preact = einsum("bhwnt,bhwnta->bhwta", couplings, u)
        if bias_t is not None:
            preact = preact + bias_t
        parents = squash(preact)
        if it < iterations - 1:
            logits = logits + einsum("bhwnta,bhwta->bhwnt", u, parents)
    return CapsuleGrid(parents)


def conv_capsule_forward(children: CapsuleGrid, spec: ConvCapsuleSpec,
                         transforms: Parameter | Tensor,
                         biases: Parameter | Tensor | None) -> CapsuleGrid:
    predictions = form_predictions(children, spec, transforms)
    return dynamic_route(predictions, spec.routing_iterations, bias=biases)


def capsule_average_pool(grid: CapsuleGrid) -> Tensor:
    """Per-type element-wise mean over height and width: ``B×n×a``."""
    return grid.activations.mean(axis=(1, 2))


def magnitudes(vectors: Tensor) -> Tensor:
    """Euclidean length of each vector along the last axis.

    Squashed capsules are strictly shorter than 1; a length at or above 1
    is logged as a warning.
    """
    lengths = l2norm(vectors)
    longest = float(np.max(lengths.data, initial=0.0))
    if longest >= 1.0:
        logger.warning("capsule length %.6f is not below 1; input was not squashed", longest)
    return lengths


class ConvCapsuleLayer:
    """Owns the transform and bias parameters of one convolutional capsule layer."""

    def __init__(self, name: str, spec: ConvCapsuleSpec, rng: np.random.Generator,
                 dtype: np.dtype | type = np.float32) -> None:
        spec.validate(name)
        self.name = name
        self.spec = spec
        fan_in = spec.kernel * spec.kernel * spec.in_atoms
        init = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=spec.transform_shape)
        self.transform = Parameter(f"{name}.transform", init.astype(dtype))
        self.bias = Parameter(f"{name}.bias", np.full(spec.bias_shape, 0.1, dtype=dtype))

    def parameters(self) -> list[Parameter]:
        return [self.transform, self.bias]

    def __call__(self, children: CapsuleGrid) -> CapsuleGrid:
        return conv_capsule_forward(children, self.spec, self.transform, self.bias)
