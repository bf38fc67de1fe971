"""Ultra-lightweight edge detection toolkit built on from-scratch kernels."""

from .tensor import Tensor, no_grad
from .blocks import BlockSpec, build_block, build_fblock, build_poolblock, block_param_count
from .model import ModelConfig, UHNet, PRESETS, build

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "no_grad",
    "BlockSpec",
    "build_block",
    "build_poolblock",
    "build_fblock",
    "block_param_count",
    "ModelConfig",
    "UHNet",
    "PRESETS",
    "build",
    "__version__",
]
