"""Analytic edge datasets for smoke tests and demos.

Each sample partitions the canvas into regions (nested circles, rectangles,
half-planes) and renders a flat-shaded image; the ground-truth edge map marks
pixels whose region id differs from the right or lower 4-neighbor, so edges
are one pixel wide and known exactly.
"""

from __future__ import annotations

import argparse
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .data import save_image
from PIL import Image


def _region_ids(h: int, w: int, rng: np.random.Generator, n_shapes: int = 3) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    ids = np.zeros((h, w), dtype=np.int64)
    for s in range(1, n_shapes + 1):
        kind = rng.integers(3)
        if kind == 0:  # circle
            cy, cx = rng.uniform(0.2, 0.8) * h, rng.uniform(0.2, 0.8) * w
            r = rng.uniform(0.15, 0.35) * min(h, w)
            mask = (ys - cy) ** 2 + (xs - cx) ** 2 <= r ** 2
        elif kind == 1:  # rectangle
            y0, y1 = np.sort(rng.uniform(0.1, 0.9, 2) * h)
            x0, x1 = np.sort(rng.uniform(0.1, 0.9, 2) * w)
            mask = (ys >= y0) & (ys <= y1) & (xs >= x0) & (xs <= x1)
        else:  # half-plane with random orientation
            theta = rng.uniform(0, np.pi)
            c = rng.uniform(0.3, 0.7) * (h + w) / 2
            mask = ys * np.sin(theta) + xs * np.cos(theta) >= c
        ids = np.where(mask, s, ids)
    return ids


def _edges(ids: np.ndarray) -> np.ndarray:
    edge = np.zeros(ids.shape, dtype=np.float32)
    edge[:, :-1][ids[:, :-1] != ids[:, 1:]] = 1.0
    edge[:-1, :][ids[:-1, :] != ids[1:, :]] = 1.0
    return edge


def make_sample(h: int, w: int, rng: np.random.Generator,
                noise: float = 0.02) -> Tuple[np.ndarray, np.ndarray]:
    """One (image, label) pair: image (1, 3, h, w) in [0, 1], label (1, 1, h, w)."""
    ids = _region_ids(h, w, rng)
    n_regions = int(ids.max()) + 1
    palette = rng.uniform(0.1, 0.9, size=(n_regions, 3))
    image = palette[ids].transpose(2, 0, 1).astype(np.float32)
    if noise:
        image = image + rng.normal(0.0, noise, size=image.shape).astype(np.float32)
    image = np.clip(image, 0.0, 1.0)
    return image[None], _edges(ids)[None, None]


def make_dataset(count: int, h: int, w: int, seed: int = 0,
                 noise: float = 0.02) -> List[Tuple[np.ndarray, np.ndarray]]:
    rng = np.random.default_rng(seed)
    return [make_sample(h, w, rng, noise) for _ in range(count)]


def write_dataset(out_dir, count: int, h: int, w: int, seed: int = 0,
                  annotators: int = 1, noise: float = 0.02,
                  test_fraction: float = 0.0) -> Path:
    """Render a dataset to disk; returns the manifest path.

    Layout: images/NNN.png (RGB), labels/NNN_a.png (grayscale, 255 = edge),
    manifest.tsv.  Extra annotators are exact copies of the first map — a
    legitimate multi-annotator set with full consensus.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    n_test = int(round(count * test_fraction))
    lines = []
    for i, (image, label) in enumerate(make_dataset(count, h, w, seed, noise)):
        img8 = np.clip(np.round(image[0].transpose(1, 2, 0) * 255), 0, 255).astype(np.uint8)
        Image.fromarray(img8, mode="RGB").save(out / "images" / f"{i:03d}.png")
        names = []
        for a in range(annotators):
            name = f"labels/{i:03d}_{a}.png"
            save_image(out / name, label)
            names.append(name)
        split = "test" if i < n_test else "train"
        lines.append(f"images/{i:03d}.png\t{';'.join(names)}\t{split}")
    manifest = out / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="Render a synthetic edge dataset.")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--count", type=int, default=8)
    ap.add_argument("--size", type=int, nargs=2, default=(64, 64), metavar=("H", "W"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--annotators", type=int, default=1)
    ap.add_argument("--noise", type=float, default=0.02)
    ap.add_argument("--test-fraction", type=float, default=0.0)
    args = ap.parse_args(argv)
    manifest = write_dataset(args.out, args.count, args.size[0], args.size[1],
                             seed=args.seed, annotators=args.annotators,
                             noise=args.noise, test_fraction=args.test_fraction)
    print(manifest)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
