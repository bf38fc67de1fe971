"""Building blocks: bottleneck variants, the stage-transition PoolBlock,
and the decoder FBlock.

A block is a plain object holding initialized parameter tensors and a
``forward`` method; construction is deterministic given the rng.  The
bottleneck family shares one layer pattern, pointwise in, a spatial
body, pointwise out, and differs only in the body:

    rb1    1 standard 3x3
    rb2    2 standard 3x3
    lb     1 depthwise 3x3
    pddp   2 depthwise 3x3 (5x5 effective receptive field)
    lb5x5  1 depthwise 5x5

Every conv is followed by norm+relu except the final pointwise, which is
followed by norm only; the closing relu runs after the optional residual
add.  3x3/5x5 convs use shape-preserving zero padding, 1x1 use none.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

import numpy as np

from . import functional as F
from .errors import ConfigError
from .tensor import Tensor

BLOCK_BODIES = {
    # kind -> (ns, nd, body kernel size)
    "rb1": (1, 0, 3),
    "rb2": (2, 0, 3),
    "lb": (0, 1, 3),
    "pddp": (0, 2, 3),
    "lb5x5": (0, 1, 5),
}


@dataclass
class BlockSpec:
    """Declarative description of one bottleneck-family block."""

    kind: str
    c_in: int
    c_mid: int
    c_out: int
    residual: bool = False
    ns: int = field(init=False)
    nd: int = field(init=False)

    def __post_init__(self):
        if self.kind not in BLOCK_BODIES:
            raise ConfigError(f"unknown block kind {self.kind!r}")
        if min(self.c_in, self.c_mid, self.c_out) <= 0:
            raise ConfigError(f"channel counts must be positive, got {self}")
        if self.residual and self.c_in != self.c_out:
            raise ConfigError(
                f"residual block needs c_in == c_out, got {self.c_in} vs {self.c_out} "
                "(no 1x1 shortcut is allowed)"
            )
        self.ns, self.nd, _ = BLOCK_BODIES[self.kind]


class Conv:
    """One bias-free convolution layer: standard, depthwise, or pointwise."""

    def __init__(self, kind: str, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 dtype=np.float32):
        if kind == "pointwise" and k != 1:
            raise ConfigError("pointwise convolution must have k=1")
        if kind == "depthwise" and c_out != c_in:
            raise ConfigError("depthwise convolution keeps the channel count")
        self.kind = kind
        self.c_in = c_in
        self.c_out = c_out
        self.k = k
        self.padding = k // 2
        shape = (c_out, 1, k, k) if kind == "depthwise" else (c_out, c_in, k, k)
        fan_in = k * k if kind == "depthwise" else c_in * k * k
        bound = math.sqrt(6.0 / fan_in)  # Kaiming uniform, relu gain
        self.weight = Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype),
                             requires_grad=True)

    def param_count(self) -> int:
        if self.kind == "depthwise":
            return self.c_in * self.k * self.k
        if self.kind == "pointwise":
            return self.c_out * self.c_in
        return self.c_out * self.c_in * self.k * self.k

    def macs(self, h_out: int, w_out: int) -> int:
        return self.param_count() * h_out * w_out

    def forward(self, x: Tensor) -> Tensor:
        if self.kind == "depthwise":
            return F.depthwise_conv2d(x, self.weight, stride=1, padding=self.padding)
        return F.conv2d(x, self.weight, stride=1, padding=self.padding)


class Norm:
    """Batch norm state: learnable scale/shift plus running statistics."""

    def __init__(self, c: int, dtype=np.float32, eps: float = 1e-5, momentum: float = 0.1):
        self.c = c
        self.eps = eps
        self.momentum = momentum
        self.scale = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
        self.shift = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)

    def param_count(self) -> int:
        return 2 * self.c

    def forward(self, x: Tensor, training: bool) -> Tensor:
        return F.batch_norm(x, self.scale, self.shift, self.running_mean, self.running_var,
                            training, momentum=self.momentum, eps=self.eps)


class BottleneckBlock:
    """Shared implementation of the rb1/rb2/lb/pddp/lb5x5 family."""

    def __init__(self, spec: BlockSpec, norm_enabled: bool, rng: np.random.Generator,
                 dtype=np.float32):
        self.spec = spec
        self.norm_enabled = norm_enabled
        ns, nd, body_k = BLOCK_BODIES[spec.kind]
        body_kind = "standard" if ns else "depthwise"
        layers: List[Tuple[str, Conv, Optional[Norm]]] = []

        def add(name: str, conv: Conv):
            layers.append((name, conv, Norm(conv.c_out, dtype) if norm_enabled else None))

        add("pw1", Conv("pointwise", spec.c_in, spec.c_mid, 1, rng, dtype))
        for i in range(ns + nd):
            prefix = "conv" if body_kind == "standard" else "dw"
            add(f"{prefix}{i + 1}", Conv(body_kind, spec.c_mid, spec.c_mid, body_k, rng, dtype))
        add("pw2", Conv("pointwise", spec.c_mid, spec.c_out, 1, rng, dtype))
        self.layers = layers

    def named_layers(self) -> Iterator[Tuple[str, Conv, Optional[Norm]]]:
        return iter(self.layers)

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        h = x
        last = len(self.layers) - 1
        for idx, (_, conv, norm) in enumerate(self.layers):
            h = conv.forward(h)
            if norm is not None:
                h = norm.forward(h, training)
            if idx != last:
                h = F.relu(h)
        if self.spec.residual:
            h = h + x
        return F.relu(h)


class PoolBlock:
    """Parameter-free stage transition: max-pool and avg-pool fused.

    Equal channel widths on both sides fuse by addition; a doubled width
    fuses by concatenation (max-pool channels first).  Spatial dims halve.
    """

    def __init__(self, c_prev: int, c_next: int):
        if c_next == c_prev:
            self.mode = "add"
        elif c_next == 2 * c_prev:
            self.mode = "concat"
        else:
            raise ConfigError(
                f"PoolBlock supports equal or doubled widths, got {c_prev} -> {c_next}"
            )
        self.c_in = c_prev
        self.c_out = c_next

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        mp = F.pool2d(x, "max", 2, 2)
        ap = F.pool2d(x, "avg", 2, 2)
        return mp + ap if self.mode == "add" else F.concat_channels(mp, ap)


class FBlock:
    """Decoder unit: upsample x2, channel-match pointwise, norm+relu.

    Output spatially and channel-wise matches the previous stage so it
    can be added to that stage's features directly.
    """

    def __init__(self, c_next: int, c_prev: int, norm_enabled: bool,
                 rng: np.random.Generator, dtype=np.float32):
        if c_next <= 0 or c_prev <= 0:
            raise ConfigError("FBlock channel counts must be positive")
        self.pw = Conv("pointwise", c_next, c_prev, 1, rng, dtype)
        self.norm = Norm(c_prev, dtype) if norm_enabled else None

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        h = F.upsample_bilinear(x, 2)
        h = self.pw.forward(h)
        if self.norm is not None:
            h = self.norm.forward(h, training)
        return F.relu(h)


def build_block(spec: BlockSpec, norm_enabled: bool = True,
                rng: Optional[np.random.Generator] = None,
                dtype=np.float32) -> BottleneckBlock:
    return BottleneckBlock(spec, norm_enabled, rng or np.random.default_rng(0), dtype)


def build_poolblock(c_prev: int, c_next: int) -> PoolBlock:
    return PoolBlock(c_prev, c_next)


def build_fblock(c_next: int, c_prev: int, norm_enabled: bool = True,
                 rng: Optional[np.random.Generator] = None,
                 dtype=np.float32) -> FBlock:
    return FBlock(c_next, c_prev, norm_enabled, rng or np.random.default_rng(0), dtype)


def block_param_count(block, include_norm: bool = True) -> int:
    """Learnable parameter count; with include_norm=False only conv weights
    are counted, matching the block-design accounting convention."""
    if isinstance(block, PoolBlock):
        return 0
    if isinstance(block, FBlock):
        total = block.pw.param_count()
        if include_norm and block.norm is not None:
            total += block.norm.param_count()
        return total
    total = 0
    for _, conv, norm in block.named_layers():
        total += conv.param_count()
        if include_norm and norm is not None:
            total += norm.param_count()
    return total
