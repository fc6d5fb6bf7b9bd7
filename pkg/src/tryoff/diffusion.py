"""Noise schedules, forward noising, deterministic DDIM steps, DREAM
rectification, and classifier-free guidance combination.

Shared by the image-latent diffusion and the garment-cue feature diffusion.
All operations are pure; timesteps are integers in [1, T] with t = 0 meaning
"clean" (alpha_bar(0) == 1).  Tensor arguments may be torch tensors or numpy
arrays; per-element timestep vectors require torch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch


class NoiseSchedule:
    """Beta/alpha/alpha-bar tables, kept in float64."""

    def __init__(self, betas):
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or len(betas) < 1:
            raise ValueError("betas must be a non-empty 1-D sequence")
        if not np.all((betas > 0.0) & (betas < 1.0)):
            raise ValueError("betas must lie strictly in (0, 1)")
        self.betas = betas
        self.alphas = 1.0 - betas
        self.alpha_bars = np.cumprod(self.alphas)
        if not np.all(np.diff(self.alpha_bars) < 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if not np.all((self.alpha_bars > 0.0) & (self.alpha_bars < 1.0)):
            raise ValueError("alpha_bar must lie in (0, 1)")

    @classmethod
    def linear(cls, timesteps: int = 1000, beta_start: float = 1e-4,
               beta_end: float = 0.02) -> "NoiseSchedule":
        return cls(np.linspace(beta_start, beta_end, timesteps))

    @property
    def timesteps(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t):
        """alpha_bar at integer step(s) t in [0, T]; alpha_bar(0) == 1."""
        t_arr = np.asarray(t.cpu().numpy() if torch.is_tensor(t) else t)
        if np.any(t_arr < 0) or np.any(t_arr > self.timesteps):
            raise ValueError(f"timestep out of range [0, {self.timesteps}]")
        table = np.concatenate([[1.0], self.alpha_bars])
        out = table[t_arr]
        return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out


def _coef(value, like):
    """Broadcastable coefficient matching the tensor/array `like`."""
    if torch.is_tensor(like):
        c = torch.as_tensor(value, dtype=like.dtype, device=like.device)
        if c.ndim == 1:  # per-batch-element timestep
            c = c.reshape(-1, *([1] * (like.ndim - 1)))
        return c
    return value


def forward_noise(x0, t, eps, sched: NoiseSchedule):
    """x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps."""
    if hasattr(x0, "shape") and hasattr(eps, "shape") and x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    ab = np.asarray(sched.alpha_bar(t))
    if np.any(np.asarray(t.cpu().numpy() if torch.is_tensor(t) else t) < 1):
        raise ValueError("forward_noise requires 1 <= t <= T")
    return _coef(np.sqrt(ab), x0) * x0 + _coef(np.sqrt(1.0 - ab), x0) * eps


def ddim_x0(x_t, eps_pred, t, sched: NoiseSchedule):
    """Algebraic inversion of forward_noise: the implied clean signal."""
    ab = np.asarray(sched.alpha_bar(t))
    return (x_t - _coef(np.sqrt(1.0 - ab), x_t) * eps_pred) / _coef(np.sqrt(ab), x_t)


def ddim_step(x_t, eps_pred, t, t_prev, sched: NoiseSchedule):
    """Deterministic (eta = 0) DDIM update from step t to t_prev < t."""
    if t_prev > t:
        raise ValueError(f"step order violation: t_prev {t_prev} > t {t}")
    if t_prev == t:
        return x_t
    x0 = ddim_x0(x_t, eps_pred, t, sched)
    ab_prev = np.asarray(sched.alpha_bar(t_prev))
    return _coef(np.sqrt(ab_prev), x_t) * x0 + _coef(np.sqrt(1.0 - ab_prev), x_t) * eps_pred


def eps_from_x0(x_t, x0_pred, t, sched: NoiseSchedule):
    """Implied noise for an x0-predicting network, via the forward relation."""
    ab = np.asarray(sched.alpha_bar(t))
    return (x_t - _coef(np.sqrt(ab), x_t) * x0_pred) / _coef(np.sqrt(1.0 - ab), x_t)


def ddim_timestep_pairs(timesteps: int, steps: int) -> list:
    """Uniformly strided (t, t_prev) substep pairs from T down to 0."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    steps = min(steps, timesteps)
    grid = np.unique(np.round(np.linspace(0, timesteps, steps + 1)).astype(int))
    return [(int(grid[i]), int(grid[i - 1])) for i in range(len(grid) - 1, 0, -1)]


def dream_rectify(z_t, eps, eps_pred_sg, t, p, sched: NoiseSchedule):
    """Rectified (input, target) pair for estimation-adaptive training.

    delta = eps - eps_pred_sg (the prediction is treated as a constant),
    lambda_t = sqrt(1 - alpha_bar_t) ** p, and

        z_hat   = z_t + sqrt(1 - alpha_bar_t) * lambda_t * delta
        eps_hat = eps + lambda_t * delta

    p = inf is an exact sentinel: the pair (z_t, eps) is returned unchanged,
    so the rectified loss is bit-identical to the plain diffusion loss.
    """
    if math.isinf(p):
        return z_t, eps
    if p < 0:
        raise ValueError("p must be >= 0 or inf")
    if torch.is_tensor(eps_pred_sg) and eps_pred_sg.requires_grad:
        raise ValueError("eps_pred_sg must not carry gradient")
    sq1m = np.sqrt(1.0 - np.asarray(sched.alpha_bar(t)))
    lam = sq1m**p
    delta = eps - eps_pred_sg
    z_hat = z_t + _coef(sq1m * lam, z_t) * delta
    eps_hat = eps + _coef(lam, eps) * delta
    return z_hat, eps_hat


def dream_lambda(t, p, sched: NoiseSchedule):
    """lambda_t = sqrt(1 - alpha_bar_t) ** p; 0 at the p = inf sentinel."""
    if math.isinf(p):
        return 0.0
    return np.sqrt(1.0 - np.asarray(sched.alpha_bar(t))) ** p


def cfg_combine(eps_uncond, eps_cond, w: float):
    """eps_uncond + w * (eps_cond - eps_uncond); w = 1 returns eps_cond exactly."""
    if w == 1.0:
        return eps_cond
    if w == 0.0:
        return eps_uncond
    return eps_uncond + w * (eps_cond - eps_uncond)
