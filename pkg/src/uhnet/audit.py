"""Parameter, MAC, and throughput accounting.

The MAC count walks the model exactly as the forward pass does, one row per
layer.  Convolutions contribute multiply-accumulates (``c_out*c_in*k^2*h*w``
standard / pointwise, ``c*k^2*h*w`` depthwise); pooling, upsampling,
normalization, activations, and residual adds are tallied as plain
elementwise ops in a separate column and stay out of the headline MAC total.
Because the multiply-accumulate convention in the literature is ambiguous,
reports print both the MAC total and its doubling.
"""

from __future__ import annotations

import csv
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .blocks import BLOCK_BODIES, BlockSpec, build_block, block_param_count
from .errors import ConfigError
from .model import UHNet


@dataclass
class LayerRow:
    name: str
    kind: str
    params: int
    macs: int
    ops: int


@dataclass
class AuditReport:
    height: int
    width: int
    rows: List[LayerRow] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def total_ops(self) -> int:
        return sum(r.ops for r in self.rows)

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["name", "kind", "params", "macs", "ops"])
            for r in self.rows:
                writer.writerow([r.name, r.kind, r.params, r.macs, r.ops])
            writer.writerow(["total", "", self.total_params, self.total_macs, self.total_ops])

    def table(self) -> str:
        header = ("name", "kind", "params", "macs", "ops")
        body = [(r.name, r.kind, str(r.params), str(r.macs), str(r.ops)) for r in self.rows]
        body.append(("total", "", str(self.total_params), str(self.total_macs), str(self.total_ops)))
        widths = [max(len(row[i]) for row in [header] + body) for i in range(5)]
        lines = []
        for row in [header] + body:
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        lines.append("")
        lines.append(
            f"input {self.height}x{self.width}: {self.total_params} params, "
            f"{self.total_macs} MACs ({self.total_macs / 1e9:.3f} G; "
            f"x2 convention {2 * self.total_macs / 1e9:.3f} G), "
            f"{self.total_ops} non-MAC ops"
        )
        return "\n".join(lines)


def count_macs(model: UHNet, h: int, w: int) -> AuditReport:
    """Per-layer parameter and MAC audit of one forward pass at ``h`` x ``w``.

    Spatial dims pad up to a multiple of 4 first, mirroring inference.
    """
    if h < 4 or w < 4:
        raise ConfigError(f"audit needs h, w >= 4, got {h}x{w}")
    report = AuditReport(height=h, width=w)
    rows = report.rows
    hp, wp = h + (-h) % 4, w + (-w) % 4
    ch, cw = hp, wp

    def conv_row(name: str, conv, hh: int, ww: int):
        rows.append(LayerRow(name, conv.kind, conv.param_count(), conv.macs(hh, ww), 0))

    def norm_row(name: str, norm, c: int, hh: int, ww: int):
        if norm is not None:
            rows.append(LayerRow(name, "norm", norm.param_count(), 0, 2 * c * hh * ww))

    for s, stage in enumerate(model.stages, start=1):
        if s > 1:
            pool = model.pools[s - 2]
            # 2x2 windows: 3 comparisons (max) + 4 adds (avg) per output, plus the fuse
            pool_ops = pool.c_in * (ch // 2) * (cw // 2) * 7
            if pool.mode == "add":
                pool_ops += pool.c_out * (ch // 2) * (cw // 2)
            ch, cw = ch // 2, cw // 2
            rows.append(LayerRow(f"pool{s - 1}", f"poolblock/{pool.mode}", 0, 0, pool_ops))
        for b, block in enumerate(stage):
            base = f"stage{s}.block{b}"
            elementwise = 0
            n_layers = len(block.layers)
            for idx, (lname, conv, norm) in enumerate(block.layers):
                conv_row(f"{base}.{lname}", conv, ch, cw)
                norm_row(f"{base}.norm{idx + 1}", norm, conv.c_out, ch, cw)
                if idx != n_layers - 1:
                    elementwise += conv.c_out * ch * cw  # relu
            if block.spec.residual:
                elementwise += block.spec.c_out * ch * cw  # add
            elementwise += block.spec.c_out * ch * cw  # closing relu
            rows.append(LayerRow(f"{base}.elementwise", "relu/add", 0, 0, elementwise))

    dec_h, dec_w = ch, cw  # stage-3 resolution
    for i, fb in enumerate(model.fblocks):
        base = f"decoder.fb{3 - i}"
        out_h, out_w = dec_h * 2, dec_w * 2
        c_out = fb.pw.c_out
        rows.append(LayerRow(f"{base}.upsample", "bilinear", 0, 0, 4 * fb.pw.c_in * out_h * out_w))
        conv_row(f"{base}.pw", fb.pw, out_h, out_w)
        norm_row(f"{base}.norm", fb.norm, c_out, out_h, out_w)
        # skip add + relu
        rows.append(LayerRow(f"{base}.elementwise", "relu/add", 0, 0, 2 * c_out * out_h * out_w))
        dec_h, dec_w = out_h, out_w

    conv_row("head", model.head, dec_h, dec_w)
    rows.append(LayerRow("head.sigmoid", "sigmoid", 0, 0, dec_h * dec_w))
    return report


def machine_descriptor(threads: int = None) -> str:
    cpu = platform.processor() or platform.machine() or "unknown-cpu"
    n = threads if threads is not None else (os.cpu_count() or 1)
    return (
        f"{cpu}, {n} logical cores, python {sys.version.split()[0]}, "
        f"numpy {np.__version__}"
    )


def bench_fps(model: UHNet, h: int, w: int, warmup: int = 2, iters: int = 10,
              seed: int = 0) -> float:
    """Single-image forward throughput: ``iters`` / wall time, after warmup.

    The absolute number is hardware-specific and only comparable across
    models measured on the same machine in the same session.
    """
    if iters < 10:
        raise ConfigError(f"bench_fps needs iters >= 10, got {iters}")
    image = np.random.default_rng(seed).random((1, 3, h, w)).astype(np.float32)
    for _ in range(warmup):
        model.predict(image)
    t0 = time.perf_counter()
    for _ in range(iters):
        model.predict(image)
    elapsed = time.perf_counter() - t0
    return iters / elapsed


_REPORT_WIDTHS: Tuple[Tuple[int, int, int], ...] = ((32, 32, 32), (32, 32, 64))


@dataclass
class BlockRow:
    kind: str
    c_in: int
    c_mid: int
    c_out: int
    params: int  # conv weights only, the block-design accounting convention


def block_report() -> List[BlockRow]:
    """Conv-only parameter counts for every block variant at the two
    reference widths (in, mid, out) = (32, 32, 32) and (32, 32, 64)."""
    out = []
    for c_in, c_mid, c_out in _REPORT_WIDTHS:
        for kind in BLOCK_BODIES:
            spec = BlockSpec(kind, c_in, c_mid, c_out, residual=(c_in == c_out))
            block = build_block(spec, norm_enabled=True)
            out.append(BlockRow(kind, c_in, c_mid, c_out, block_param_count(block, include_norm=False)))
    return out


def format_block_report(rows: List[BlockRow] = None) -> str:
    rows = block_report() if rows is None else rows
    lines = ["block  in  mid  out  params"]
    for r in rows:
        lines.append(f"{r.kind:<5}  {r.c_in:<3} {r.c_mid:<4} {r.c_out:<4} {r.params}")
    return "\n".join(lines)
