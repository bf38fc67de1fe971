"""Full network assembly: three stages of four blocks, pooled stage
transitions, a top-down decoder, and a single sigmoid edge head.

Topology::

    stage1 (4 blocks, full res) -> PoolBlock -> stage2 (h/2) -> PoolBlock -> stage3 (h/4)
    d3 = stage3_out
    d2 = stage2_out + FBlock(d3)
    d1 = stage1_out + FBlock(d2)
    edge = sigmoid(pointwise(c1 -> 1)(d1))

The first block of stage 1 lifts the 3-channel image to c1 with its
leading pointwise conv and therefore has no residual; every other block
is a residual pddp block at its stage's width.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import functional as F
from .blocks import BlockSpec, BottleneckBlock, Conv, FBlock, PoolBlock
from .errors import ConfigError, ShapeError
from .tensor import Tensor, no_grad

PRESETS = {
    "uhnet": (32, 32, 32),
    "uhnet_m": (32, 64, 128),
    "uhnet_l": (64, 128, 256),
}


@dataclass
class ModelConfig:
    stage_channels: Tuple[int, int, int]
    blocks_per_stage: int = 4
    norm_enabled: bool = True

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        if len(self.stage_channels) != 3 or min(self.stage_channels) <= 0:
            raise ConfigError(f"stage_channels must be 3 positive ints, got {self.stage_channels}")
        if self.blocks_per_stage < 1:
            raise ConfigError("blocks_per_stage must be >= 1")
        for a, b in zip(self.stage_channels, self.stage_channels[1:]):
            if b not in (a, 2 * a):
                raise ConfigError(
                    f"adjacent stage widths must be equal or doubled, got {a} -> {b}"
                )

    @classmethod
    def preset(cls, name: str, **kwargs) -> "ModelConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(stage_channels=PRESETS[name], **kwargs)


class UHNet:
    """A built model: blocks in execution order plus a named parameter map."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        rng = np.random.default_rng(seed)
        c1, c2, c3 = config.stage_channels
        norm = config.norm_enabled

        self.stages: List[List[BottleneckBlock]] = []
        for si, c in enumerate((c1, c2, c3)):
            stage = []
            for b in range(config.blocks_per_stage):
                # pool blocks already deliver the stage width; only the very
                # first block sees the 3-channel image and drops its residual
                block_in = 3 if (si == 0 and b == 0) else c
                spec = BlockSpec("pddp", block_in, c, c, residual=(block_in == c))
                stage.append(BottleneckBlock(spec, norm, rng, dtype))
            self.stages.append(stage)
        self.pools = [PoolBlock(c1, c2), PoolBlock(c2, c3)]
        # decoder, deepest first: d3 -> d2 then d2 -> d1
        self.fblocks = [FBlock(c3, c2, norm, rng, dtype), FBlock(c2, c1, norm, rng, dtype)]
        self.head = Conv("pointwise", c1, 1, 1, rng, dtype)

        self._params: Dict[str, Tensor] = {}
        self._buffers: Dict[str, np.ndarray] = {}
        self._register()

    def _register(self):
        def reg_norm(prefix, norm):
            if norm is None:
                return
            self._params[f"{prefix}.scale"] = norm.scale
            self._params[f"{prefix}.shift"] = norm.shift
            self._buffers[f"{prefix}.running_mean"] = norm.running_mean
            self._buffers[f"{prefix}.running_var"] = norm.running_var

        for s, stage in enumerate(self.stages, start=1):
            for b, block in enumerate(stage):
                base = f"stage{s}.block{b}"
                for i, (lname, conv, norm) in enumerate(block.named_layers(), start=1):
                    self._params[f"{base}.{lname}.weight"] = conv.weight
                    reg_norm(f"{base}.norm{i}", norm)
        for i, fb in enumerate(self.fblocks):
            base = f"decoder.fb{3 - i}"  # fb3 refines d3 -> d2, fb2 refines d2 -> d1
            self._params[f"{base}.pw.weight"] = fb.pw.weight
            reg_norm(f"{base}.norm", fb.norm)
        self._params["head.weight"] = self.head.weight

    # -- parameter access ---------------------------------------------------

    def named_parameters(self) -> Dict[str, Tensor]:
        return dict(self._params)

    def named_buffers(self) -> Dict[str, np.ndarray]:
        return dict(self._buffers)

    def param_count(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    # -- forward ------------------------------------------------------------

    def forward(self, image, training: bool = False) -> Tensor:
        """Run the network on an (n, 3, h, w) image scaled to [0, 1].

        Spatial dims not divisible by 4 are zero-padded on the bottom and
        right, and the output is cropped back, so any size is accepted.
        Returns an (n, 1, h, w) tensor of edge probabilities in (0, 1).
        """
        x = image if isinstance(image, Tensor) else Tensor(image)
        if x.data.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected an (n, 3, h, w) image tensor, got shape {x.shape}")
        n, _, h, w = x.shape
        ph = (-h) % 4
        pw = (-w) % 4
        x = F.pad_bottom_right(x, ph, pw)

        feats = []
        cur = x
        for s, stage in enumerate(self.stages):
            if s > 0:
                cur = self.pools[s - 1].forward(cur, training)
            for block in stage:
                cur = block.forward(cur, training)
            feats.append(cur)

        s1, s2, s3 = feats
        d2 = s2 + self.fblocks[0].forward(s3, training)
        d1 = s1 + self.fblocks[1].forward(d2, training)
        out = self.head.forward(d1)
        out = F.crop_top_left(out, h, w)
        return F.sigmoid(out)

    def predict(self, image) -> np.ndarray:
        """Inference convenience: no tape, no norm-stat updates."""
        with no_grad():
            return self.forward(image, training=False).data


def build(config: ModelConfig, seed: int = 0, dtype=np.float32) -> UHNet:
    return UHNet(config, seed=seed, dtype=dtype)
