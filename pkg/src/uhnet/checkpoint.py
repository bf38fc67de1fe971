"""Bit-exact binary checkpoints.

Layout (all integers little-endian):

    magic  b"UHCK"
    u32    version (currently 1)
    u32    entry count
    entry: u16 name length, UTF-8 name, u8 rank, u32 dims[rank],
           float32 payload (row-major, little-endian)

Entries cover every learnable parameter and every norm running statistic,
in registration order.  Loading without a config infers the architecture
from entry names and shapes.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, UHNet

MAGIC = b"UHCK"
VERSION = 1


def _entries(model: UHNet) -> Dict[str, np.ndarray]:
    out: Dict[str, np.ndarray] = {k: t.data for k, t in model.named_parameters().items()}
    out.update(model.named_buffers())
    return out


def save(model: UHNet, path) -> None:
    entries = _entries(model)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, arr in entries.items():
        if arr.dtype != np.float32:
            raise CheckpointError(f"checkpoint stores float32 tensors; {name!r} is {arr.dtype}")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        chunks.append(arr.astype("<f4", copy=False).tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.path}: truncated checkpoint while reading {what}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out


def read_entries(path) -> Dict[str, np.ndarray]:
    """Parse a checkpoint into a name -> float32 array map."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc.strerror})")
    r = _Reader(raw, path)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError(f"{path}: bad magic; not a checkpoint file")
    version, count = struct.unpack("<II", r.take(8, "header"))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    entries: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", r.take(2, "name length"))
        name = r.take(nlen, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", r.take(1, f"rank of {name!r}"))
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"dims of {name!r}")) if rank else ()
        n_elem = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = r.take(4 * n_elem, f"payload of {name!r}")
        entries[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(r.buf):
        raise CheckpointError(f"{path}: {len(r.buf) - r.pos} trailing bytes after last entry")
    return entries


def _infer_config(entries: Dict[str, np.ndarray], path) -> ModelConfig:
    try:
        channels = tuple(int(entries[f"stage{s}.block0.pw2.weight"].shape[0]) for s in (1, 2, 3))
    except KeyError as missing:
        raise CheckpointError(f"{path}: cannot infer architecture, missing entry {missing}")
    blocks = 0
    while f"stage1.block{blocks}.pw1.weight" in entries:
        blocks += 1
    norm_enabled = "stage1.block0.norm1.scale" in entries
    return ModelConfig(stage_channels=channels, blocks_per_stage=blocks, norm_enabled=norm_enabled)


def load(path, config: Optional[ModelConfig] = None) -> UHNet:
    """Rebuild a model from a checkpoint, bitwise identical to what was saved.

    With an explicit config the file must match it exactly; otherwise the
    config is inferred from the stored entries.
    """
    entries = read_entries(path)
    if config is None:
        config = _infer_config(entries, path)
    model = UHNet(config, seed=0)
    expected = _entries(model)

    unknown = sorted(set(entries) - set(expected))
    if unknown:
        raise CheckpointError(f"{path}: unknown parameter {unknown[0]!r} for this configuration")
    missing = sorted(set(expected) - set(entries))
    if missing:
        raise CheckpointError(f"{path}: missing parameter {missing[0]!r}")
    for name, arr in expected.items():
        stored = entries[name]
        if stored.shape != arr.shape:
            raise CheckpointError(
                f"{path}: shape mismatch for {name!r}: checkpoint {stored.shape}, "
                f"model {arr.shape}"
            )

    params = model.named_parameters()
    buffers = model.named_buffers()
    for name, stored in entries.items():
        if name in params:
            params[name].data[...] = stored
        else:
            buffers[name][...] = stored
    return model
