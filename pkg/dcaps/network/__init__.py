from dcaps.network.checkpoint import load_checkpoint, save_checkpoint
from dcaps.network.config import (
    ConvSpec,
    DCapsConfig,
    ReconSpec,
    desk_config,
    full_size_config,
    tiny_config,
    toy_config,
)
from dcaps.network.model import ClassOutput, DCapsNet, build, predict

__all__ = [
    "ClassOutput",
    "ConvSpec",
    "DCapsConfig",
    "DCapsNet",
    "ReconSpec",
    "build",
    "desk_config",
    "full_size_config",
    "load_checkpoint",
    "predict",
    "save_checkpoint",
    "tiny_config",
    "toy_config",
]
