"""AdamW with decoupled weight decay.

Update per parameter p with gradient g at step t:

    m = b1*m + (1-b1)*g
    v = b2*v + (1-b2)*g*g
    p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
    p -= lr * wd * p            (decay applied to the pre-step value,
                                 skipped for norm scale/shift)
"""

from __future__ import annotations

from typing import Callable, Dict, Optional

import numpy as np

from .errors import GradientError
from .tensor import Tensor


def _default_no_decay(name: str) -> bool:
    return name.endswith(".scale") or name.endswith(".shift")


class AdamW:
    def __init__(
        self,
        params: Dict[str, Tensor],
        lr: float = 0.001,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.01,
        no_decay: Optional[Callable[[str], bool]] = None,
    ):
        if lr < 0 or weight_decay < 0:
            raise ValueError(f"negative lr ({lr}) or weight_decay ({weight_decay})")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValueError(f"betas must lie in [0, 1), got ({beta1}, {beta2})")
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.no_decay = no_decay or _default_no_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in self.params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in self.params.items()}

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def step(self) -> None:
        """Apply one update using the gradients currently on the parameters.

        The whole step is rejected (no parameter touched) if any gradient
        contains NaN, so a bad batch cannot poison the moments.
        """
        grads = {}
        for name, t in self.params.items():
            g = t.grad
            if g is None:
                continue
            if np.isnan(g).any():
                raise GradientError(f"NaN gradient for parameter {name!r}; step rejected")
            grads[name] = g

        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, g in grads.items():
            p = self.params[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay and not self.no_decay(name):
                update = update + self.weight_decay * p.data
            p.data -= (self.lr * update).astype(p.data.dtype, copy=False)
