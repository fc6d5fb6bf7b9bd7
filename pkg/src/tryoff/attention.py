"""Every attention mechanism in the pipeline.

All hybrids are computed literally as two separate scaled-dot-product calls
combined affinely, and a zero mixing weight skips the extra branch entirely,
so the reduction to plain attention is bit-exact (same ops, same order).

Functions take explicit projection matrices (row convention: tokens @ W) so
they can be oracle-tested and gradient-checked in isolation; the UNet layers
own the matrices as parameters and call these functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import torch


@dataclass
class AttentionProjections:
    """Projection matrices one attention site may own.

    The base triple (w_q, w_k, w_v) always exists.  Extra branches are
    initialized as copies of the base k/v and stay learnable:
      - image branch (model-UNet hybrid cross-attention),
      - cond branch (injected-feature hybrid self-attention),
      - struct branch (structure-guided cross-attention),
    plus the multi-head output projection of flat-constraint attention.
    """

    w_q: torch.Tensor
    w_k: torch.Tensor
    w_v: torch.Tensor
    w_k_img: Optional[torch.Tensor] = None
    w_v_img: Optional[torch.Tensor] = None
    w_k_cond: Optional[torch.Tensor] = None
    w_v_cond: Optional[torch.Tensor] = None
    w_k_struct: Optional[torch.Tensor] = None
    w_v_struct: Optional[torch.Tensor] = None
    w_o: Optional[torch.Tensor] = None


def sdpa(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
         return_weights: bool = False):
    """softmax(q k^T / sqrt(d)) v over the last two axes."""
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError("key and value counts differ")
    weights = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1]), dim=-1)
    out = weights @ v
    return (out, weights) if return_weights else out


def hybrid_cross_attention(x, text_tokens, image_tokens,
                           proj: AttentionProjections, lam: float = 1.0):
    """Text cross-attention plus a lam-weighted image-embedding branch.

    The image embedding is a length-1 token sequence; its branch uses the
    copied-and-learnable k/v projections.
    """
    q = x @ proj.w_q
    out = sdpa(q, text_tokens @ proj.w_k, text_tokens @ proj.w_v)
    if lam != 0 and image_tokens is not None:
        out = out + lam * sdpa(q, image_tokens @ proj.w_k_img,
                               image_tokens @ proj.w_v_img)
    return out


def hybrid_self_attention(x, injected, proj: AttentionProjections,
                          beta: float = 1.0):
    """Latent self-attention plus a beta-weighted branch over injected
    reference features (keys/values from the copied-and-learnable set)."""
    q = x @ proj.w_q
    out = sdpa(q, x @ proj.w_k, x @ proj.w_v)
    if beta != 0 and injected is not None:
        out = out + beta * sdpa(q, injected @ proj.w_k_cond,
                                injected @ proj.w_v_cond)
    return out


def hybrid_self_attention_weights(x, injected, proj: AttentionProjections):
    """Condition-branch attention weights (queries over injected positions)."""
    q = x @ proj.w_q
    _, weights = sdpa(q, injected @ proj.w_k_cond, injected @ proj.w_v_cond,
                      return_weights=True)
    return weights


def structure_guided_cross_attention(x, text_tokens, structure_tokens,
                                     proj: AttentionProjections,
                                     gamma: float = 1.0):
    """Appearance-text cross-attention plus a gamma-weighted branch over the
    flat-structure tokens."""
    q = x @ proj.w_q
    out = sdpa(q, text_tokens @ proj.w_k, text_tokens @ proj.w_v)
    if gamma != 0 and structure_tokens is not None:
        out = out + gamma * sdpa(q, structure_tokens @ proj.w_k_struct,
                                 structure_tokens @ proj.w_v_struct)
    return out


def fc_attention(cues, text_tokens, proj: AttentionProjections, heads: int = 1):
    """Multi-head cross-attention from garment cues onto flat-template text.

    Queries come from the (already text-width) cues, keys/values from the
    flat-lay text embedding; head outputs are concatenated and sent through
    the learnable output projection w_o.
    """
    q = cues @ proj.w_q
    k = text_tokens @ proj.w_k
    v = text_tokens @ proj.w_v
    d = q.shape[-1]
    if d % heads:
        raise ValueError(f"dim {d} not divisible by {heads} heads")
    outs = []
    for m in range(heads):
        sl = slice(m * (d // heads), (m + 1) * (d // heads))
        outs.append(sdpa(q[..., sl], k[..., sl], v[..., sl]))
    return torch.cat(outs, dim=-1) @ proj.w_o


def resize_nearest(arr: torch.Tensor, out_hw) -> torch.Tensor:
    """Nearest-neighbor resize with floor index mapping src = i * in // out.

    Works in both directions and keeps binary masks binary at every scale.
    """
    H, W = arr.shape[-2], arr.shape[-1]
    oh, ow = out_hw
    rows = torch.arange(oh, device=arr.device) * H // oh
    cols = torch.arange(ow, device=arr.device) * W // ow
    return arr[..., rows, :][..., :, cols]


def mask_inject(features: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Gate injected features by the cloth mask resized to their token grid.

    features: (..., N, C) over a square spatial grid; mask: (H, W) in {0, 1},
    or (B, H, W) paired with (B, N, C) features.
    """
    n = features.shape[-2]
    g = math.isqrt(n)
    if g * g != n:
        raise ValueError(f"token count {n} is not a square grid")
    m = resize_nearest(mask, (g, g))
    m = m.reshape(*m.shape[:-2], n, 1)
    return m.to(features.dtype) * features


def aggregate_attention_map(weights: torch.Tensor) -> torch.Tensor:
    """Spatial response map over the reference grid.

    weights: (heads, N_q, N_r) or (N_q, N_r) attention weights.  Heads are
    averaged, query mass is summed per reference position, and the map is
    min-max normalized (all-equal maps normalize to zeros).  The result is
    (g, g) in reference-token space, the space the cloth mask lives in.
    """
    if weights.ndim == 3:
        weights = weights.mean(dim=0)
    per_ref = weights.sum(dim=-2)
    g = math.isqrt(per_ref.shape[-1])
    if g * g != per_ref.shape[-1]:
        raise ValueError("reference token count is not a square grid")
    m = per_ref.reshape(g, g)
    lo, hi = m.min(), m.max()
    if hi == lo:
        return torch.zeros_like(m)
    return (m - lo) / (hi - lo)


def attention_focus_loss(attn_maps, mask: torch.Tensor) -> torch.Tensor:
    """Mean over maps of the per-map MSE against the cloth mask.

    attn_maps: non-empty list of response maps already resized to the mask
    resolution (one per attention layer and reference image).
    """
    if len(attn_maps) == 0:
        raise ValueError("attn_maps must be non-empty")
    losses = [((m - mask.to(m.dtype)) ** 2).mean() for m in attn_maps]
    return torch.stack(losses).mean()
