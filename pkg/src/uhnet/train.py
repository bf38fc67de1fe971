"""Training loop: class-balanced cross-entropy, augmentation, checkpoints."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import checkpoint
from .errors import ConfigError, DataError
from .functional import _interp_matrix
from .model import UHNet
from .optim import AdamW

_EPS = 1e-7


def balanced_bce(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Class-balanced binary cross-entropy over the labelled pixels.

    Pixels whose target is neither 0 nor 1 are ignored.  With ``beta`` the
    fraction of negatives among labelled pixels, each positive term is
    weighted ``2*beta`` and each negative term ``2*(1-beta)``, so a balanced
    label map reduces the loss to the plain mean cross-entropy.

    Returns the scalar loss and its gradient with respect to ``pred``.
    """
    if pred.shape != target.shape:
        raise ValueError(f"pred shape {pred.shape} != target shape {target.shape}")
    pos = target == 1
    neg = target == 0
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())
    n = n_pos + n_neg
    grad = np.zeros_like(pred, dtype=np.float64)
    if n == 0:
        return 0.0, grad.astype(pred.dtype)

    beta = n_neg / n
    p = np.clip(pred.astype(np.float64), _EPS, 1.0 - _EPS)
    loss = -(
        2.0 * beta * np.log(p[pos]).sum() + 2.0 * (1.0 - beta) * np.log1p(-p[neg]).sum()
    ) / n
    grad[pos] = -2.0 * beta / (n * p[pos])
    grad[neg] = 2.0 * (1.0 - beta) / (n * (1.0 - p[neg]))
    return float(loss), grad.astype(pred.dtype)


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 1
    lr: float = 0.001
    weight_decay: float = 0.01
    hflip: bool = False
    scales: Sequence[float] = field(default_factory=lambda: (1.0,))
    rotate: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        self.scales = tuple(float(s) for s in self.scales)
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ConfigError("scales must be a non-empty sequence of positive factors")


def _resize_bilinear(arr: np.ndarray, h_out: int, w_out: int) -> np.ndarray:
    n, c, h_in, w_in = arr.shape
    if (h_out, w_out) == (h_in, w_in):
        return arr.copy()
    mh = _interp_matrix(h_out, h_in, arr.dtype.name)
    mw = _interp_matrix(w_out, w_in, arr.dtype.name)
    return np.einsum("ay,bx,ncyx->ncab", mh, mw, arr, optimize=True)


def augment(
    image: np.ndarray, label: np.ndarray, config: TrainConfig, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """Random horizontal flip, rescale, and quarter-turn rotation.

    The label rides along through every transform; after a rescale it is
    re-binarized at 0.5, so the result contains only {0, 1}.
    """
    if config.hflip and rng.random() < 0.5:
        image = image[..., ::-1]
        label = label[..., ::-1]
    scale = config.scales[rng.integers(len(config.scales))] if len(config.scales) > 1 else config.scales[0]
    if scale != 1.0:
        h = max(4, int(round(image.shape[2] * scale)))
        w = max(4, int(round(image.shape[3] * scale)))
        image = _resize_bilinear(np.ascontiguousarray(image), h, w)
        label = (_resize_bilinear(np.ascontiguousarray(label), h, w) >= 0.5).astype(label.dtype)
    if config.rotate:
        k = int(rng.integers(4))
        if k:
            image = np.rot90(image, k, axes=(2, 3))
            label = np.rot90(label, k, axes=(2, 3))
    return np.ascontiguousarray(image), np.ascontiguousarray(label)


def fit(
    model: UHNet,
    dataset: Sequence[Tuple[np.ndarray, np.ndarray]],
    config: TrainConfig,
    out_dir: Optional[str] = None,
    log=None,
) -> List[float]:
    """Train ``model`` on (image, label) pairs; returns per-epoch mean losses.

    Images are (1, 3, h, w) float arrays in [0, 1]; labels are (1, 1, h, w)
    maps of {0, 1} plus an optional ignore value in between.  Batches larger
    than one are realised by gradient accumulation, so variable image sizes
    are fine.  When ``out_dir`` is given, each epoch writes
    ``epoch_{k}.uhck`` and every step appends to ``losses.csv``.
    """
    if not dataset:
        raise DataError("dataset is empty")
    optimizer = AdamW(
        model.named_parameters(), lr=config.lr, weight_decay=config.weight_decay
    )
    rng = np.random.default_rng(config.seed)
    out_path = Path(out_dir) if out_dir is not None else None
    csv_rows: List[Tuple[int, int, float]] = []
    epoch_means: List[float] = []

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(dataset))
        losses: List[float] = []
        step = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            model.zero_grad()
            batch_losses = []
            for idx in batch:
                image, label = dataset[int(idx)]
                if image.shape[2:] != label.shape[2:]:
                    warnings.warn(
                        f"skipping sample {int(idx)}: image {image.shape[2:]} "
                        f"does not match label {label.shape[2:]}"
                    )
                    continue
                if not np.any((label == 0) | (label == 1)):
                    warnings.warn(f"skipping sample {int(idx)}: every pixel is ignored")
                    continue
                image, label = augment(image, label, config, rng)
                pred = model.forward(image, training=True)
                loss, grad = balanced_bce(pred.data, label)
                pred.backward(grad / len(batch))
                batch_losses.append(loss)
            if not batch_losses:
                continue
            optimizer.step()
            step += 1
            mean_loss = float(np.mean(batch_losses))
            losses.append(mean_loss)
            csv_rows.append((epoch, step, mean_loss))
        epoch_mean = float(np.mean(losses)) if losses else float("nan")
        epoch_means.append(epoch_mean)
        if log is not None:
            log(f"epoch {epoch}/{config.epochs}: loss {epoch_mean:.6f}")
        if out_path is not None:
            out_path.mkdir(parents=True, exist_ok=True)
            checkpoint.save(model, out_path / f"epoch_{epoch}.uhck")

    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        with open(out_path / "losses.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "step", "loss"])
            writer.writerows(csv_rows)
    return epoch_means