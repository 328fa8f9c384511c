"""Helpers shared by the trainers."""

from __future__ import annotations

import logging
import math

import numpy as np
import torch

from .errors import InvalidArgument, TrainingDivergence

log = logging.getLogger("cascade_edit")


def seeded(seed: int) -> tuple[np.random.Generator, torch.Generator]:
    torch.manual_seed(seed)
    return np.random.default_rng(seed), torch.Generator().manual_seed(seed)


def to_nchw(x) -> torch.Tensor:
    """(..., H, W, C) numpy/tensor -> (N, C, H, W) float32 tensor."""
    t = torch.as_tensor(np.asarray(x, dtype=np.float32))
    if t.ndim == 3:
        t = t[None]
    return t.permute(0, 3, 1, 2).contiguous()


def to_nhwc(x: torch.Tensor) -> np.ndarray:
    return x.detach().permute(0, 2, 3, 1).cpu().numpy()


def check_loss(loss: torch.Tensor, stage: str, step: int) -> float:
    value = float(loss.item())
    if not math.isfinite(value):
        raise TrainingDivergence(f"{stage}: non-finite loss at step {step}")
    return value


class History:
    """Loss curve; one row per logged step."""

    def __init__(self, stage: str, every: int):
        self.stage = stage
        self.every = max(1, int(every))
        self.rows: list[tuple[int, float]] = []
        self._acc: list[float] = []

    def add(self, step: int, value: float, total: int) -> None:
        self._acc.append(value)
        if (step + 1) % self.every == 0 or step + 1 == total:
            mean = float(np.mean(self._acc))
            self.rows.append((step + 1, mean))
            self._acc = []
            log.info("%s step %d/%d loss %.5f", self.stage, step + 1, total, mean)


def adam_cosine(params, lr: float, steps: int):
    opt = torch.optim.Adam(params, lr=lr)
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda s: 0.05 + 0.95 * 0.5 * (1 + math.cos(math.pi * min(s, steps) / max(steps, 1))))
    return opt, sched


def require_nonempty(clips, split: str):
    if not clips:
        raise InvalidArgument(f"{split} split is empty")
    return clips
