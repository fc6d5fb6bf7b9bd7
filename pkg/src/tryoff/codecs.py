"""Deterministic latent codec and the toy image/text encoders.

The codec is an exactly invertible space-to-depth rearrangement with the
zero-centering affine map x -> 2x - 1 computed in float64, so
decode(encode(x)) is bit-identical to x for float32 images.  The encoders
are small transformers standing in for the frozen pretrained encoders a
full-scale system would use.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .garments import CATEGORIES, HEMS, PATTERNS, SILHOUETTES, SLEEVES


class LatentCodec:
    """Bijective pixel rearrangement: (H, W, 3) image <-> (3 f^2, H/f, W/f)."""

    def __init__(self, downscale: int = 4):
        if downscale < 1:
            raise ValueError("downscale must be >= 1")
        self.f = downscale

    @property
    def channels(self) -> int:
        return 3 * self.f**2

    def encode(self, image: np.ndarray) -> np.ndarray:
        f = self.f
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) image, got {image.shape}")
        H, W, _ = image.shape
        if H % f or W % f:
            raise ValueError(f"image size {H}x{W} not divisible by {f}")
        z = 2.0 * image.astype(np.float64) - 1.0
        # (i, dy, j, dx, c) -> (c, dy, dx, i, j)
        z = z.reshape(H // f, f, W // f, f, 3).transpose(4, 1, 3, 0, 2)
        return np.ascontiguousarray(z.reshape(3 * f * f, H // f, W // f))

    def decode(self, latent: np.ndarray) -> np.ndarray:
        f = self.f
        latent = np.asarray(latent, dtype=np.float64)
        if latent.ndim != 3 or latent.shape[0] != 3 * f * f:
            raise ValueError(f"expected ({3 * f * f}, h, w) latent, got {latent.shape}")
        _, h, w = latent.shape
        z = latent.reshape(3, f, f, h, w).transpose(3, 1, 4, 2, 0)
        image = (z.reshape(h * f, w * f, 3) + 1.0) * 0.5
        return image.astype(np.float32)


class TransformerBlock(nn.Module):
    """Pre-norm block: LN -> MHA -> residual, LN -> 4x FFN -> residual."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        self.heads = heads
        self.norm1 = nn.LayerNorm(dim)
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(dim, dim, bias=False)
        self.to_v = nn.Linear(dim, dim, bias=False)
        self.to_out = nn.Linear(dim, dim, bias=False)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(
            nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim))

    def attend(self, x):
        b, n, d = x.shape
        h = self.heads
        q = self.to_q(x).reshape(b, n, h, d // h).transpose(1, 2)
        k = self.to_k(x).reshape(b, n, h, d // h).transpose(1, 2)
        v = self.to_v(x).reshape(b, n, h, d // h).transpose(1, 2)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(d // h), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.to_out(out)

    def forward(self, x):
        x = x + self.attend(self.norm1(x))
        return x + self.ffn(self.norm2(x))


class ImageEncoder(nn.Module):
    """Patchify -> linear -> transformer blocks -> LN; tokens plus mean pool.

    Input (B, 3, H, W) in [0, 1]; tokens (B, N, dim) with N = (H / patch)^2,
    pooled (B, dim) = token mean.
    """

    def __init__(self, image_size: int = 64, patch: int = 8, dim: int = 64,
                 depth: int = 2, heads: int = 4):
        super().__init__()
        if image_size % patch:
            raise ValueError("image_size must be divisible by patch")
        self.patch = patch
        self.num_tokens = (image_size // patch) ** 2
        self.proj = nn.Linear(3 * patch * patch, dim)
        self.pos = nn.Parameter(torch.randn(self.num_tokens, dim) * 0.02)
        self.blocks = nn.ModuleList(TransformerBlock(dim, heads) for _ in range(depth))
        self.norm = nn.LayerNorm(dim)

    def tokenize(self, images: torch.Tensor) -> torch.Tensor:
        b, c, H, W = images.shape
        p = self.patch
        x = images.reshape(b, c, H // p, p, W // p, p)
        x = x.permute(0, 2, 4, 1, 3, 5).reshape(b, (H // p) * (W // p), c * p * p)
        return x

    def forward(self, images: torch.Tensor):
        x = self.proj(self.tokenize(images)) + self.pos
        for block in self.blocks:
            x = block(x)
        tokens = self.norm(x)
        return tokens, tokens.mean(dim=1)


def build_vocabulary() -> list:
    """pad/unk plus every template word and garment enum name."""
    words = ["<pad>", "<unk>",
             "Reconstruct", "A", "model", "is", "wearing", "flat-lay",
             "garment", "silhouette", "pattern", "sleeve", "hem"]
    for group in (CATEGORIES, PATTERNS, SLEEVES, HEMS):
        words += [w for w in group if w not in words]
    for sils in SILHOUETTES.values():
        words += [w for w in sils if w not in words]
    return words


class TextEncoder(nn.Module):
    """Whitespace tokenizer over a fixed vocabulary plus an embedding table.

    Unknown words map to <unk>; sequences are padded/truncated to a fixed
    length.  Frozen for the whole pipeline (a stand-in for a pretrained
    text encoder), so embeddings are just their random initialization.
    """

    PAD, UNK = 0, 1

    def __init__(self, dim: int = 64, length: int = 16):
        super().__init__()
        self.vocab = build_vocabulary()
        self.index = {w: i for i, w in enumerate(self.vocab)}
        self.length = length
        self.embed = nn.Embedding(len(self.vocab), dim)
        self.pos = nn.Parameter(torch.randn(length, dim) * 0.02)

    def token_ids(self, prompt: str) -> torch.Tensor:
        words = prompt.strip().split()
        # strip the comma the prompt-prefix ablation introduces
        ids = [self.index.get(w.rstrip(","), self.UNK) for w in words]
        ids = ids[: self.length]
        ids += [self.PAD] * (self.length - len(ids))
        return torch.tensor(ids, dtype=torch.long)

    def forward(self, prompt: str) -> torch.Tensor:
        return self.embed(self.token_ids(prompt)) + self.pos

    def encode_batch(self, prompts) -> torch.Tensor:
        ids = torch.stack([self.token_ids(p) for p in prompts])
        return self.embed(ids) + self.pos


class PooledProjection(nn.Module):
    """Learnable linear map from the pooled image embedding to text width."""

    def __init__(self, in_dim: int = 64, out_dim: int = 64,
                 identity_init: bool = False):
        super().__init__()
        self.linear = nn.Linear(in_dim, out_dim)
        if identity_init:
            if in_dim != out_dim:
                raise ValueError("identity init needs a square projection")
            with torch.no_grad():
                self.linear.weight.copy_(torch.eye(out_dim))
                self.linear.bias.zero_()

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        return self.linear(pooled)


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    """(H, W, 3) float image -> (3, H, W) float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))).float()


def tensor_to_image(x: torch.Tensor) -> np.ndarray:
    return x.detach().cpu().numpy().transpose(1, 2, 0).astype(np.float32)
