"""DDPM noise schedule, forward noising and ancestral sampling."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import torch


class DiffusionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Betas for steps t = 1..T, stored at index t - 1."""

    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64).reshape(-1)
        if len(b) < 1 or np.any(b <= 0) or np.any(b >= 1) or np.any(np.diff(b) < 0):
            raise DiffusionError("betas must lie in (0, 1) and be non-decreasing")
        object.__setattr__(self, "betas", b)

    @property
    def T(self) -> int:
        return len(self.betas)

    @cached_property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @cached_property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    def alpha_bar(self, t) -> np.ndarray:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise DiffusionError(f"timestep must lie in 1..{self.T}")
        return self.alpha_bars[t - 1]

    def posterior_variance(self, t: int) -> float:
        """Variance of q(x_{t-1} | x_t, x_0); zero at t = 1."""
        if t == 1:
            return 0.0
        ab, ab_prev = self.alpha_bars[t - 1], self.alpha_bars[t - 2]
        return float(self.betas[t - 1] * (1.0 - ab_prev) / (1.0 - ab))

    def torch_alpha_bars(self, dtype=torch.float32) -> torch.Tensor:
        return torch.as_tensor(self.alpha_bars, dtype=dtype)


def make_schedule(T: int = 100, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise DiffusionError("T must be >= 1")
    if not (0 < beta_start <= beta_end < 1):
        raise DiffusionError("need 0 < beta_start <= beta_end < 1")
    return NoiseSchedule(np.linspace(beta_start, beta_end, T))


def q_sample(x0, t, eps, schedule: NoiseSchedule):
    """sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps; ``t`` is a scalar or one step per batch row."""
    if tuple(np.shape(x0)) != tuple(np.shape(eps)):
        raise DiffusionError(f"shape mismatch: x0 {tuple(np.shape(x0))} vs eps {tuple(np.shape(eps))}")
    ab = schedule.alpha_bar(t.cpu().numpy() if isinstance(t, torch.Tensor) else t)
    if isinstance(x0, torch.Tensor):
        ab = torch.as_tensor(ab, dtype=x0.dtype)
        if ab.ndim == 1:
            ab = ab.reshape(-1, *([1] * (x0.ndim - 1)))
        return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * eps
    ab = np.asarray(ab, dtype=np.float64)
    if ab.ndim == 1:
        ab = ab.reshape(-1, *([1] * (np.ndim(x0) - 1)))
    return np.sqrt(ab) * np.asarray(x0) + np.sqrt(1.0 - ab) * np.asarray(eps)


def predict_x0(x_t, t: int, eps, schedule: NoiseSchedule):
    ab = float(schedule.alpha_bar(t))
    return (x_t - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)


@torch.no_grad()
def sample(denoiser, shape, schedule: NoiseSchedule, seed: int, clamp=None, dtype=torch.float32) -> torch.Tensor:
    """Ancestral DDPM sampling from x_T ~ N(0, I).

    ``denoiser(x_t, t)`` returns the predicted noise for integer step ``t``. The last step
    returns the posterior mean without added noise. ``clamp=(lo, hi)`` is applied at the end.
    """
    gen = torch.Generator().manual_seed(int(seed))
    x = torch.randn(shape, generator=gen, dtype=dtype)
    for t in range(schedule.T, 0, -1):
        beta = float(schedule.betas[t - 1])
        ab = float(schedule.alpha_bars[t - 1])
        eps = denoiser(x, t)
        mean = (x - beta / np.sqrt(1.0 - ab) * eps) / np.sqrt(1.0 - beta)
        if t > 1:
            noise = torch.randn(shape, generator=gen, dtype=dtype)
            x = mean + np.sqrt(schedule.posterior_variance(t)) * noise
        else:
            x = mean
    if clamp is not None:
        x = torch.clamp(x, *clamp)
    return x
