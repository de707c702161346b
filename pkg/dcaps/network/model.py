"""The D-Caps network: initial conv, capsule stack, capsule-average pooling,
class scores and the reconstruction decoder.

Batches are ``B×H×W×3`` arrays in ``[0, 1]``. Everything is batched, but no
operation mixes images, so a batch forward equals per-image forwards
stacked.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from dcaps.capsule_layers import (
    CapsuleGrid,
    ConvCapsuleLayer,
    capsule_average_pool,
    magnitudes,
)
from dcaps.core.errors import DimensionError, NumericalError
from dcaps.network.config import DCapsConfig
from dcaps.numerics.ops import clip, conv2d, dense, log, relu, sigmoid, transposed_conv2d
from dcaps.numerics.tensor import ArrayLike, Parameter, Tensor, as_tensor, count_parameters

logger = logging.getLogger(__name__)

BCE_EPS = 1e-7
CONFIDENCE_EPS = 1e-12
DEFAULT_DTYPE = np.float32


@dataclass
class ClassOutput:
    """Network output for a batch.

    ``class_vectors`` is ``B×C×k``; ``class_scores`` is ``B×C`` and always
    equals the vector magnitudes; ``reconstruction`` is ``B×H×W×3`` or
    ``None`` when the decoder was skipped.
    """

    class_vectors: Tensor
    class_scores: Tensor
    reconstruction: Tensor | None = None

    @property
    def batch(self) -> int:
        return self.class_scores.shape[0]


@dataclass
class LossTerms:
    classification: Tensor
    reconstruction: Tensor | None
    total: Tensor


def _he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)


class DCapsNet:
    """Parameters plus the forward, reconstruction and loss computations."""

    def __init__(self, config: DCapsConfig, rng: np.random.Generator,
                 dtype: np.dtype | type = DEFAULT_DTYPE) -> None:
        config.validate()
        self.config = config
        self.dtype = np.dtype(dtype)

        conv = config.initial_conv
        self.conv_kernel = Parameter(
            "conv1.kernel",
            _he_normal(rng, (conv.kernel, conv.kernel, 3, conv.channels), conv.kernel * conv.kernel * 3, dtype),
        )
        self.conv_bias = Parameter("conv1.bias", np.zeros(conv.channels, dtype=dtype))
        self.capsule_layers = [
            ConvCapsuleLayer(name, spec, rng, dtype=dtype)
            for name, spec in zip(config.layer_names, config.layer_specs, strict=True)
        ]

        r = config.recon
        gh, gw, gc = config.recon_grid
        code = config.num_classes * config.output_atoms
        self.recon_dense_weight = Parameter(
            "recon.dense.weight", _he_normal(rng, (code, gh * gw * gc), code, dtype))
        self.recon_dense_bias = Parameter("recon.dense.bias", np.zeros(gh * gw * gc, dtype=dtype))
        self.recon_deconv1_kernel = Parameter(
            "recon.deconv1.kernel",
            _he_normal(rng, (r.kernel, r.kernel, gc, r.hidden_channels), gc * r.kernel * r.kernel, dtype))
        self.recon_deconv1_bias = Parameter("recon.deconv1.bias", np.zeros(r.hidden_channels, dtype=dtype))
        self.recon_deconv2_kernel = Parameter(
            "recon.deconv2.kernel",
            _he_normal(rng, (r.kernel, r.kernel, r.hidden_channels, r.hidden_channels),
                       r.hidden_channels * r.kernel * r.kernel, dtype))
        self.recon_deconv2_bias = Parameter("recon.deconv2.bias", np.zeros(r.hidden_channels, dtype=dtype))
        self.recon_out_kernel = Parameter(
            "recon.out.kernel", _he_normal(rng, (1, 1, r.hidden_channels, 3), r.hidden_channels, dtype))
        self.recon_out_bias = Parameter("recon.out.bias", np.zeros(3, dtype=dtype))

    # -- parameters ----------------------------------------------------------

    def encoder_parameters(self) -> list[Parameter]:
        params = [self.conv_kernel, self.conv_bias]
        for layer in self.capsule_layers:
            params.extend(layer.parameters())
        return params

    def decoder_parameters(self) -> list[Parameter]:
        return [
            self.recon_dense_weight, self.recon_dense_bias,
            self.recon_deconv1_kernel, self.recon_deconv1_bias,
            self.recon_deconv2_kernel, self.recon_deconv2_bias,
            self.recon_out_kernel, self.recon_out_bias,
        ]

    def parameters(self) -> list[Parameter]:
        """Every parameter in a fixed order (also the checkpoint order)."""
        return self.encoder_parameters() + self.decoder_parameters()

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def parameter_count(self) -> int:
        return count_parameters(self.parameters())

    # -- forward -------------------------------------------------------------

    def _check_batch(self, batch: ArrayLike) -> Tensor:
        x = as_tensor(batch, dtype=self.dtype)
        if x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype))
        expected = tuple(self.config.input_shape)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise DimensionError(f"batch shape {x.shape} does not match B×{'×'.join(map(str, expected))}")
        return x

    def encode(self, batch: ArrayLike) -> Tensor:
        """Class capsule vectors, ``B×C×k``."""
        x = self._check_batch(batch)
        conv = self.config.initial_conv
        features = relu(conv2d(x, self.conv_kernel.value, self.conv_bias.value, stride=conv.stride))
        grid = CapsuleGrid.from_feature_map(features)
        for layer in self.capsule_layers:
            grid = layer(grid)
        return capsule_average_pool(grid)

    def forward(self, batch: ArrayLike, reconstruct: bool | None = None) -> ClassOutput:
        """Score a batch; the decoder runs when ``reconstruct`` (default: recon_enabled)."""
        if reconstruct is None:
            reconstruct = self.config.recon_enabled
        vectors = self.encode(batch)
        scores = magnitudes(vectors)
        recon = self.reconstruct(vectors) if reconstruct else None
        return ClassOutput(class_vectors=vectors, class_scores=scores, reconstruction=recon)

    __call__ = forward

    def reconstruct(self, class_vectors: ArrayLike) -> Tensor:
        """Decode ``B×C×k`` (or ``B×(C·k)``) class vectors into ``B×H×W×3`` images in ``[0, 1]``."""
        cfg = self.config
        code = cfg.num_classes * cfg.output_atoms
        v = as_tensor(class_vectors, dtype=self.dtype)
        if v.size % code != 0 or v.shape[-1] not in (cfg.output_atoms, code):
            raise DimensionError(f"class vectors of shape {v.shape} do not flatten to B×{code}")
        b = v.size // code
        h, w, _ = cfg.input_shape
        gh, gw, gc = cfg.recon_grid
        grid = dense(v.reshape(b, code), self.recon_dense_weight.value, self.recon_dense_bias.value)
        x = relu(grid.reshape(b, gh, gw, gc))
        x = relu(transposed_conv2d(x, self.recon_deconv1_kernel.value, stride=2,
                                   bias=self.recon_deconv1_bias.value))
        x = relu(transposed_conv2d(x, self.recon_deconv2_kernel.value, stride=2,
                                   bias=self.recon_deconv2_bias.value))
        x = sigmoid(conv2d(x, self.recon_out_kernel.value, self.recon_out_bias.value))
        if x.shape[1:3] != (h, w):
            x = x[:, :h, :w, :]
        return x

    # -- loss and prediction -------------------------------------------------

    def loss_terms(self, output: ClassOutput, labels: ArrayLike, images: ArrayLike | None = None) -> LossTerms:
        """Binary cross-entropy on clamped scores plus ``λ``·per-pixel MSE.

        The reconstruction term is omitted when reconstruction is disabled or
        the output carries no reconstruction.

        :raises NumericalError: naming the term that went non-finite.
        """
        cfg = self.config
        labels = np.asarray(labels).reshape(-1)
        if labels.shape[0] != output.batch:
            raise DimensionError(f"{labels.shape[0]} labels for a batch of {output.batch}")
        if cfg.num_classes == 1:
            target = labels.astype(self.dtype).reshape(-1, 1)
        else:
            if labels.min() < 0 or labels.max() >= cfg.num_classes:
                raise DimensionError(f"labels must lie in [0, {cfg.num_classes}), got {sorted(set(labels.tolist()))}")
            target = np.eye(cfg.num_classes, dtype=self.dtype)[labels.astype(int)]

        p = clip(output.class_scores, BCE_EPS, 1.0 - BCE_EPS)
        bce = -(log(p) * target + log(1.0 - p) * (1.0 - target)).mean()
        if not np.isfinite(bce.data).all():
            raise NumericalError("non-finite classification (binary cross-entropy) loss")

        recon_term = None
        total = bce
        if cfg.recon_enabled and output.reconstruction is not None:
            if images is None:
                raise DimensionError("reconstruction loss needs the input images")
            diff = output.reconstruction - as_tensor(images, dtype=self.dtype)
            recon_term = (diff * diff).mean()
            if not np.isfinite(recon_term.data).all():
                raise NumericalError("non-finite reconstruction (MSE) loss")
            total = bce + recon_term * cfg.recon_weight
        return LossTerms(classification=bce, reconstruction=recon_term, total=total)

    def loss(self, output: ClassOutput, labels: ArrayLike, images: ArrayLike | None = None) -> Tensor:
        return self.loss_terms(output, labels, images).total

    def predict(self, output: ClassOutput) -> list[tuple[int, float]]:
        return predict(output)


def predict_scores(scores: Sequence[float] | np.ndarray) -> tuple[int, float]:
    """(class, confidence) for one image's class scores.

    One score: class 1 iff score ≥ 0.5, confidence ``2·|s − 0.5|``.
    Several: argmax, confidence ``(max − second) / max(max, ε)``.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if s.size == 1:
        score = float(s[0])
        return (1 if score >= 0.5 else 0), min(2.0 * abs(score - 0.5), 1.0)
    order = np.argsort(-s, kind="stable")
    top, second = float(s[order[0]]), float(s[order[1]])
    return int(order[0]), (top - second) / max(top, CONFIDENCE_EPS)


def predict(output: ClassOutput) -> list[tuple[int, float]]:
    scores = output.class_scores.data
    return [predict_scores(row) for row in scores]


def build(config: DCapsConfig, seed: int, dtype: np.dtype | type = DEFAULT_DTYPE) -> DCapsNet:
    """Initialize a network deterministically from ``seed``.

    :raises ConfigError: the layer chain is inconsistent.
    """
    net = DCapsNet(config, np.random.default_rng(seed), dtype=dtype)
    logger.debug("built D-Caps network: %d parameters (seed %d)", net.parameter_count(), seed)
    return net
