"""Image, label, and manifest loading.

Images come in as 8-bit RGB or grayscale rasters (PNG, PPM/PGM) and leave as
(1, 3, h, w) float arrays scaled to [0, 1] — no mean/std normalization, the
network's norm layers absorb input statistics.  Labels ternarize into edge
(1), non-edge (0), and an ignore value strictly inside the (gamma_lo,
gamma_hi) band that the loss skips.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError

SPLITS = ("train", "test")


def _open(path) -> Image.Image:
    p = Path(path)
    if not p.exists():
        raise DataError(f"no such file: {p}")
    try:
        return Image.open(p)
    except UnidentifiedImageError as exc:
        raise DataError(f"unreadable image file: {p}") from exc


def load_image(path) -> np.ndarray:
    """Read an RGB or grayscale raster as (1, 3, h, w) float32 in [0, 1]."""
    img = _open(path)
    if img.mode not in ("RGB", "L"):
        raise DataError(f"unsupported image mode {img.mode!r} (need RGB or L): {path}")
    arr = np.asarray(img, dtype=np.float32) / 255.0
    if img.mode == "L":
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))[None]


def ternarize(values: np.ndarray, gamma_lo: float = 0.0, gamma_hi: float = 0.5) -> np.ndarray:
    """Map [0, 1] values to {0, ignore, 1}; the ignore marker is the band
    midpoint, so re-applying the rule is a no-op."""
    if not gamma_lo < gamma_hi:
        raise DataError(f"need gamma_lo < gamma_hi, got {gamma_lo} >= {gamma_hi}")
    ignore = ignore_value(gamma_lo, gamma_hi)
    out = np.full(values.shape, ignore, dtype=np.float32)
    out[values >= gamma_hi] = 1.0
    out[values <= gamma_lo] = 0.0
    return out


def ignore_value(gamma_lo: float = 0.0, gamma_hi: float = 0.5) -> float:
    return (gamma_lo + gamma_hi) / 2.0


def load_label(path, gamma_lo: float = 0.0, gamma_hi: float = 0.5) -> np.ndarray:
    """Read a grayscale annotation as a (1, 1, h, w) ternarized map."""
    img = _open(path)
    if img.mode != "L":
        raise DataError(f"labels must be grayscale, got mode {img.mode!r}: {path}")
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return ternarize(arr, gamma_lo, gamma_hi)[None, None]


def label_to_binary(label: np.ndarray) -> np.ndarray:
    """Collapse a ternarized (…, h, w) label to a binary h×w edge map
    (ignored pixels count as non-edge for evaluation)."""
    return (label.reshape(label.shape[-2:]) == 1.0).astype(np.float32)


def save_image(path, prob: np.ndarray) -> None:
    """Write a probability map as an 8-bit grayscale PNG, value = round(255*p)."""
    arr = np.asarray(prob, dtype=np.float64)
    arr = arr.reshape(arr.shape[-2:])
    data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="L").save(Path(path))


@dataclass
class ManifestRecord:
    image: Path
    labels: Tuple[Path, ...]
    split: str


@dataclass
class DatasetManifest:
    path: Path
    records: List[ManifestRecord]

    def split(self, name: str) -> List[ManifestRecord]:
        return [r for r in self.records if r.split == name]


def load_manifest(path) -> DatasetManifest:
    """Parse "image<TAB>label[;label…]<TAB>split" records; paths are
    resolved relative to the manifest's own directory."""
    p = Path(path)
    if not p.exists():
        raise DataError(f"no such manifest: {p}")
    base = p.parent
    records: List[ManifestRecord] = []
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{p}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        image_s, labels_s, split = parts
        if split not in SPLITS:
            raise DataError(f"{p}:{lineno}: split must be one of {SPLITS}, got {split!r}")
        label_names = [s for s in labels_s.split(";") if s]
        if not label_names:
            raise DataError(f"{p}:{lineno}: record needs at least one label")
        image = base / image_s
        labels = tuple(base / s for s in label_names)
        for f in (image, *labels):
            if not f.exists():
                raise DataError(f"{p}:{lineno}: missing file: {f}")
        records.append(ManifestRecord(image=image, labels=labels, split=split))
    if not records:
        raise DataError(f"empty manifest: {p}")
    return DatasetManifest(path=p, records=records)


def load_pair(record: ManifestRecord, gamma_lo: float = 0.0,
              gamma_hi: float = 0.5) -> Tuple[np.ndarray, np.ndarray]:
    """Load a record's image and its first label, shape-checked."""
    image = load_image(record.image)
    label = load_label(record.labels[0], gamma_lo, gamma_hi)
    if image.shape[2:] != label.shape[2:]:
        raise DataError(
            f"label {record.labels[0]} is {label.shape[2:]} but image "
            f"{record.image} is {image.shape[2:]}"
        )
    return image, label


def load_gt_set(record: ManifestRecord, gamma_hi: float = 0.5) -> List[np.ndarray]:
    """Load every annotator map of a record as binary h×w arrays."""
    maps = []
    for lp in record.labels:
        label = load_label(lp, gamma_hi=gamma_hi)
        maps.append(label_to_binary(label))
    first = maps[0].shape
    for lp, m in zip(record.labels, maps):
        if m.shape != first:
            raise DataError(f"annotator maps disagree on size: {lp} is {m.shape}, expected {first}")
    return maps
