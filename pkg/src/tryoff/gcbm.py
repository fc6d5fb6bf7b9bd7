"""Garment-cue diffusion prior.

A MetaFormer-style transformer over concatenated feature tokens
[warped | model | noisy target | timestep] that regresses the *clean*
garment-cue tokens (x0-prediction).  Sampling runs a deterministic DDIM
trajectory in feature space, converting each clean prediction to an implied
noise estimate via the forward relation.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .codecs import TransformerBlock
from .diffusion import NoiseSchedule, ddim_timestep_pairs, eps_from_x0, forward_noise

FFN_MULT = 4  # intermediate FFN width is exactly 4x the hidden dim

TYPE_WARPED, TYPE_MODEL, TYPE_TARGET = 0, 1, 2


def sinusoidal_embedding(t, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Standard sin/cos timestep embedding; t is an int or a (B,) tensor."""
    if not torch.is_tensor(t):
        t = torch.tensor([t], dtype=torch.float32)
    t = t.float().reshape(-1)
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32,
                                                           device=t.device) / half)
    args = t[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class GarmentCuePrior(nn.Module):
    def __init__(self, dim: int = 64, depth: int = 4, heads: int = 4):
        super().__init__()
        self.dim = dim
        # learnable type encodings distinguish the three token sources
        self.type_enc = nn.Parameter(torch.randn(3, dim) * 0.02)
        self.time_proj = nn.Linear(dim, dim)
        self.blocks = nn.ModuleList(TransformerBlock(dim, heads) for _ in range(depth))
        self.norm = nn.LayerNorm(dim)
        self.head = nn.Linear(dim, dim)

    def build_condition_tokens(self, f_w, f_m, f_c_noisy, t) -> torch.Tensor:
        """[warped + enc_w | model + enc_m | noisy target + enc_t | t-token].

        Inputs are (B, N, dim) with equal feature widths; output is
        (B, 3N + 1, dim).
        """
        for name, f in (("f_w", f_w), ("f_m", f_m), ("f_c_noisy", f_c_noisy)):
            if f.shape[-1] != self.dim:
                raise ValueError(f"{name} width {f.shape[-1]} != model dim {self.dim}")
        if not (f_w.shape == f_m.shape == f_c_noisy.shape):
            raise ValueError("feature token shapes must match")
        t_token = self.time_proj(sinusoidal_embedding(t, self.dim).to(f_w.dtype))
        t_token = t_token.expand(f_w.shape[0], -1).unsqueeze(1)
        return torch.cat([
            f_w + self.type_enc[TYPE_WARPED],
            f_m + self.type_enc[TYPE_MODEL],
            f_c_noisy + self.type_enc[TYPE_TARGET],
            t_token,
        ], dim=1)

    def forward(self, f_w, f_m, f_c_noisy, t) -> torch.Tensor:
        """Predicted clean cue tokens, read from the target-segment positions."""
        x = self.build_condition_tokens(f_w, f_m, f_c_noisy, t)
        for block in self.blocks:
            x = block(x)
        n = f_w.shape[1]
        return self.head(self.norm(x[:, 2 * n:3 * n]))

    def loss(self, f_c, f_w, f_m, eps, t, sched: NoiseSchedule) -> torch.Tensor:
        """MSE between clean cues and the prediction from their noised version."""
        f_c_noisy = forward_noise(f_c, t, eps, sched)
        return F.mse_loss(self(f_w, f_m, f_c_noisy, t), f_c)

    @torch.no_grad()
    def sample(self, f_w, f_m, steps: int, sched: NoiseSchedule,
               generator: torch.Generator = None, seed: int = None) -> torch.Tensor:
        """Iterative feature-space denoising from pure noise (deterministic
        DDIM given the seed)."""
        if steps < 1:
            raise ValueError("steps must be >= 1")
        if generator is None:
            generator = torch.Generator()
            generator.manual_seed(0 if seed is None else seed)
        x = torch.randn(f_w.shape, generator=generator, dtype=f_w.dtype)
        for t, t_prev in ddim_timestep_pairs(sched.timesteps, steps):
            pred = self(f_w, f_m, x, t)
            eps_hat = eps_from_x0(x, pred, t, sched)
            ab_prev = sched.alpha_bar(t_prev)
            x = math.sqrt(ab_prev) * pred + math.sqrt(1.0 - ab_prev) * eps_hat
        return x
