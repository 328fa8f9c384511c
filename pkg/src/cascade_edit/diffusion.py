"""Noise schedule, forward noising, epsilon-prediction loss and DDIM sampling.

Timesteps are 1-based: ``t`` runs over ``1..T`` and ``alphas_bar[t - 1]`` is
the cumulative signal fraction after ``t`` noising steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import InvalidArgument, TrainingDivergence


@dataclass
class NoiseSchedule:
    T: int
    betas: np.ndarray
    alphas_bar: np.ndarray

    def to_dict(self) -> dict:
        return {"T": self.T, "beta_start": float(self.betas[0]), "beta_end": float(self.betas[-1])}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return make_schedule(d["T"], d["beta_start"], d["beta_end"])

    def alpha_bar(self, t, like: torch.Tensor | None = None):
        """``alphas_bar`` at 1-based ``t`` (int or integer tensor)."""
        if isinstance(t, torch.Tensor):
            table = torch.as_tensor(self.alphas_bar, dtype=like.dtype if like is not None else torch.float64)
            return table[t.long() - 1]
        return float(self.alphas_bar[int(t) - 1])


@dataclass
class ConditionPack:
    """Conditioning for one denoiser call.

    ``image`` is channel-concatenated with ``z_t`` (B, C, h, w); ``audio`` is a
    token sequence (B, L, D) consumed by cross-attention.
    """

    image: torch.Tensor | None = None
    audio: torch.Tensor | None = None

    def __len__(self):
        for x in (self.image, self.audio):
            if x is not None:
                return x.shape[0]
        return 0

    def select(self, idx) -> "ConditionPack":
        return ConditionPack(
            None if self.image is None else self.image[idx],
            None if self.audio is None else self.audio[idx],
        )


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1 or not 0 < beta_start <= beta_end < 1:
        raise InvalidArgument(f"invalid schedule T={T}, beta=({beta_start}, {beta_end})")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    return NoiseSchedule(T, betas, np.cumprod(1.0 - betas))


def _bcast(a, ref):
    if isinstance(a, torch.Tensor) and a.ndim == 1 and ref.ndim > 1:
        return a.view(-1, *([1] * (ref.ndim - 1)))
    return a


def forward_diffuse(z0, t, eps, schedule: NoiseSchedule):
    """``z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps``; works on numpy or torch.

    ``t`` may be a single step or (torch only) one step per batch element.
    """
    if tuple(z0.shape) != tuple(eps.shape):
        raise InvalidArgument(f"z0 {tuple(z0.shape)} and eps {tuple(eps.shape)} differ in shape")
    if isinstance(t, torch.Tensor) and t.ndim > 0:
        if (t < 1).any() or (t > schedule.T).any():
            raise InvalidArgument("t outside 1..T")
        ab = _bcast(schedule.alpha_bar(t, like=z0), z0)
        return ab.sqrt() * z0 + (1 - ab).sqrt() * eps
    t = int(t)
    if not 1 <= t <= schedule.T:
        raise InvalidArgument(f"t={t} outside 1..{schedule.T}")
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def training_loss(denoiser, z0: torch.Tensor, cond: ConditionPack, schedule: NoiseSchedule,
                  rng: torch.Generator) -> torch.Tensor:
    """Mean squared error between the injected noise and the denoiser's estimate.

    ``denoiser(z_t, t, cond)`` must return a tensor shaped like ``z_t``.
    """
    if not torch.isfinite(z0).all():
        raise InvalidArgument("z0 contains non-finite values")
    b = z0.shape[0]
    t = torch.randint(1, schedule.T + 1, (b,), generator=rng)
    eps = torch.randn(z0.shape, generator=rng, dtype=z0.dtype)
    z_t = forward_diffuse(z0, t, eps, schedule)
    loss = torch.mean((eps - denoiser(z_t, t, cond)) ** 2)
    if not torch.isfinite(loss):
        raise TrainingDivergence(f"non-finite diffusion loss ({loss.item()})")
    return loss


def ddim_timesteps(T: int, n_steps: int) -> list[int]:
    if not 1 <= n_steps <= T:
        raise InvalidArgument(f"n_steps={n_steps} must be in 1..{T}")
    ts = np.round(np.linspace(T, 1, n_steps)).astype(int)
    return sorted(set(int(t) for t in ts), reverse=True)


@torch.no_grad()
def ddim_sample(denoiser, cond: ConditionPack, schedule: NoiseSchedule, n_steps: int, seed: int,
                shape, dtype=torch.float32) -> torch.Tensor:
    """Deterministic (eta = 0) DDIM from pure noise down to a clean latent.

    ``shape`` is the full latent batch shape; the starting noise is drawn from
    a generator seeded with ``seed`` so the result is a pure function of
    (parameters, cond, seed, n_steps).
    """
    gen = torch.Generator().manual_seed(int(seed))
    x = torch.randn(tuple(shape), generator=gen, dtype=dtype)
    ts = ddim_timesteps(schedule.T, n_steps)
    for k, t in enumerate(ts):
        ab = schedule.alpha_bar(t)
        ab_prev = schedule.alpha_bar(ts[k + 1]) if k + 1 < len(ts) else 1.0
        tt = torch.full((x.shape[0],), t, dtype=torch.long)
        eps = denoiser(x, tt, cond).to(x.dtype)
        x0 = (x - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)
        x = np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps
    return x
