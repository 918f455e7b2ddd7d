"""
SGD for the training harness: global L2 clipping, weight decay folded into
the gradient on the effective weight, optional momentum, and a per-step
cosine schedule with optional linear warm-up.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np

from training.services.layers import Parameter

logger = logging.getLogger(__name__)

SCHEDULES = ("cosine", "constant")


def cosine_learning_rate(step: int, lr_max: float, lr_min: float, warmup_steps: int, total_steps: int) -> float:
    """Linear warm-up to lr_max, then cosine decay towards lr_min; never zero while lr_max > 0."""
    if step < warmup_steps:
        return lr_max * (step + 1) / warmup_steps
    if total_steps <= warmup_steps:
        return lr_max
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return lr_min + 0.5 * (1.0 + math.cos(progress * math.pi)) * (lr_max - lr_min)


def global_grad_norm(params: Sequence[Parameter]) -> float:
    return math.sqrt(math.fsum(float(np.sum(np.square(p.grad))) for p in params if p.grad is not None))


@dataclass
class SGD:
    lr: float = 0.05
    momentum: float = 0.0
    weight_decay: float = 1e-4
    clip_norm: float = 2.0
    schedule: str = "cosine"
    warmup_steps: int = 0
    min_lr: float = 0.0
    total_steps: int = 1
    velocity: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ValueError(f"Unknown schedule '{self.schedule}', expected one of {SCHEDULES}")
        if self.lr <= 0 or self.min_lr < 0 or self.min_lr > self.lr:
            raise ValueError(f"Need 0 <= min_lr <= lr and lr > 0, got lr={self.lr}, min_lr={self.min_lr}")
        if self.momentum < 0 or self.weight_decay < 0 or self.clip_norm < 0:
            raise ValueError("momentum, weight_decay and clip_norm must be nonnegative")

    def learning_rate(self, step: int) -> float:
        if self.schedule == "constant":
            return self.lr
        return cosine_learning_rate(step, self.lr, self.min_lr, self.warmup_steps, self.total_steps)

    def step(self, params: Sequence[Parameter], step: int) -> Dict[str, float]:
        lr = self.learning_rate(step)
        norm = global_grad_norm(params)
        scale = self.clip_norm / norm if self.clip_norm and norm > self.clip_norm else 1.0

        for p in params:
            if p.grad is None:
                continue
            direction = p.grad * scale if scale != 1.0 else p.grad
            if self.weight_decay:
                direction = direction + self.weight_decay * p.effective()
            if self.momentum:
                buf = self.velocity.get(p.name)
                direction = direction if buf is None else self.momentum * buf + direction
                self.velocity[p.name] = direction
            p.step(direction, lr)
            p.grad = None

        return {"lr": lr, "grad_norm": norm, "clip_scale": scale}
