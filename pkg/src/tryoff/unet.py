"""The two conditional UNets.

One skeleton serves both roles: the *model* UNet runs a single noise-free
pass at timestep 0 and exposes its self-attention-site hidden states as
injectable features (its cross-attention carries the extra image-embedding
branch); the *denoising* UNet predicts noise, consumes injected features in
every self-attention layer, and applies structure guidance at the configured
cross-attention stage(s).  All other cross-attention layers see only the
appearance text tokens.

Sites are ordered down0, down1, down2, mid, up1, up2, up3; each stage has
one self-attention and one cross-attention block, which is the minimum that
preserves the eight insertion-position ablation vocabulary.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import (
    AttentionProjections,
    fc_attention,
    hybrid_cross_attention,
    hybrid_self_attention,
    hybrid_self_attention_weights,
    structure_guided_cross_attention,
)
from .gcbm import sinusoidal_embedding

SELF_ATTN_SITES = ("down0", "down1", "down2", "mid", "up1", "up2", "up3")

# cross-attention module path per insertion position, used by the stage-2
# trainable-parameter partition
SITE_TO_CROSS_PATH = {
    "down0": "down_cross.0",
    "down1": "down_cross.1",
    "down2": "down_cross.2",
    "mid": "mid_cross",
    "up1": "up_cross.0",
    "up2": "up_cross.1",
    "up3": "up_cross.2",
}


def _proj_param(in_dim: int, out_dim: int) -> nn.Parameter:
    w = torch.empty(in_dim, out_dim)
    bound = 1.0 / math.sqrt(in_dim)
    nn.init.uniform_(w, -bound, bound)
    return nn.Parameter(w)


def _copy_param(src: nn.Parameter) -> nn.Parameter:
    return nn.Parameter(src.detach().clone())


def _groups(requested: int, channels: int) -> int:
    g = min(requested, channels)
    while channels % g:
        g -= 1
    return g


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, emb_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(groups, in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, out_ch)
        self.norm2 = nn.GroupNorm(_groups(groups, out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb_proj(F.silu(emb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class SelfAttentionBlock(nn.Module):
    """Hybrid self-attention over the spatial tokens of a feature map.

    The condition branch (keys/values over injected reference features) uses
    projections initialized as copies of the base k/v and kept learnable.
    """

    def __init__(self, ch: int, groups: int, with_condition_branch: bool = True):
        super().__init__()
        self.norm = nn.GroupNorm(_groups(groups, ch), ch)
        self.w_q = _proj_param(ch, ch)
        self.w_k = _proj_param(ch, ch)
        self.w_v = _proj_param(ch, ch)
        if with_condition_branch:
            self.w_k_cond = _copy_param(self.w_k)
            self.w_v_cond = _copy_param(self.w_v)
        else:
            self.w_k_cond = None
            self.w_v_cond = None

    def projections(self) -> AttentionProjections:
        return AttentionProjections(self.w_q, self.w_k, self.w_v,
                                    w_k_cond=self.w_k_cond, w_v_cond=self.w_v_cond)

    def forward(self, h, injected=None, beta: float = 0.0,
                want_weights: bool = False):
        b, c, H, W = h.shape
        tokens = self.norm(h).reshape(b, c, H * W).transpose(1, 2)
        out = hybrid_self_attention(tokens, injected, self.projections(), beta)
        weights = None
        if want_weights and injected is not None:
            weights = hybrid_self_attention_weights(tokens, injected,
                                                    self.projections())
        h = h + out.transpose(1, 2).reshape(b, c, H, W)
        return h, tokens, weights


class CrossAttentionBlock(nn.Module):
    """Text cross-attention with a role-specific auxiliary branch.

    role "model": lam-weighted branch over the projected image embedding.
    role "denoising": gamma-weighted branch over flat-structure tokens,
    active only at the configured insertion stage(s).
    """

    def __init__(self, ch: int, text_dim: int, groups: int, role: str):
        super().__init__()
        if role not in ("model", "denoising"):
            raise ValueError(f"unknown role {role!r}")
        self.role = role
        self.norm = nn.GroupNorm(_groups(groups, ch), ch)
        self.w_q = _proj_param(ch, ch)
        self.w_k = _proj_param(text_dim, ch)
        self.w_v = _proj_param(text_dim, ch)
        if role == "model":
            self.w_k_img = _copy_param(self.w_k)
            self.w_v_img = _copy_param(self.w_v)
        else:
            self.w_k_struct = _copy_param(self.w_k)
            self.w_v_struct = _copy_param(self.w_v)

    def projections(self) -> AttentionProjections:
        if self.role == "model":
            return AttentionProjections(self.w_q, self.w_k, self.w_v,
                                        w_k_img=self.w_k_img, w_v_img=self.w_v_img)
        return AttentionProjections(self.w_q, self.w_k, self.w_v,
                                    w_k_struct=self.w_k_struct,
                                    w_v_struct=self.w_v_struct)

    def forward(self, h, text_tokens, image_tokens=None, lam: float = 0.0,
                structure_tokens=None, gamma: float = 0.0):
        b, c, H, W = h.shape
        tokens = self.norm(h).reshape(b, c, H * W).transpose(1, 2)
        if self.role == "model":
            out = hybrid_cross_attention(tokens, text_tokens, image_tokens,
                                         self.projections(), lam)
        else:
            out = structure_guided_cross_attention(tokens, text_tokens,
                                                   structure_tokens,
                                                   self.projections(), gamma)
        return h + out.transpose(1, 2).reshape(b, c, H, W)


class FlatStructureModule(nn.Module):
    """Flat-structure constraint head: a learnable cue projection followed by
    one multi-head flat-constraint attention layer.

    Queries come from the projected garment cues, keys/values from the
    flat-template text embedding; the output is injected into the denoising
    UNet's configured cross-attention stage.
    """

    def __init__(self, cue_dim: int = 64, text_dim: int = 64, heads: int = 4):
        super().__init__()
        self.heads = heads
        self.cue_proj = nn.Linear(cue_dim, text_dim)
        self.w_q = _proj_param(text_dim, text_dim)
        self.w_k = _proj_param(text_dim, text_dim)
        self.w_v = _proj_param(text_dim, text_dim)
        self.w_o = _proj_param(text_dim, text_dim)

    def projections(self) -> AttentionProjections:
        return AttentionProjections(self.w_q, self.w_k, self.w_v, w_o=self.w_o)

    def forward(self, cues, t_flat_tokens):
        return fc_attention(self.cue_proj(cues), t_flat_tokens,
                            self.projections(), self.heads)


class ConditionalUNet(nn.Module):
    def __init__(self, latent_channels: int, base_channels: int = 32,
                 channel_mults=(1, 2, 4), groups: int = 8, text_dim: int = 64,
                 role: str = "denoising", num_classes: int = None):
        super().__init__()
        self.role = role
        self.base_channels = base_channels
        chs = [base_channels * m for m in channel_mults]
        emb_dim = 4 * base_channels

        self.time_mlp = nn.Sequential(
            nn.Linear(base_channels, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim))
        self.class_embedding = (nn.Embedding(num_classes, emb_dim)
                                if num_classes else None)

        self.conv_in = nn.Conv2d(latent_channels, chs[0], 3, padding=1)

        self.down_res = nn.ModuleList()
        self.down_attn = nn.ModuleList()
        self.down_cross = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        prev = chs[0]
        for i, ch in enumerate(chs):
            self.down_res.append(ResBlock(prev, ch, emb_dim, groups))
            self.down_attn.append(SelfAttentionBlock(ch, groups, role == "denoising"))
            self.down_cross.append(CrossAttentionBlock(ch, text_dim, groups, role))
            if i < len(chs) - 1:
                self.downsamples.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))
            prev = ch

        self.mid_res1 = ResBlock(chs[-1], chs[-1], emb_dim, groups)
        self.mid_attn = SelfAttentionBlock(chs[-1], groups, role == "denoising")
        self.mid_cross = CrossAttentionBlock(chs[-1], text_dim, groups, role)
        self.mid_res2 = ResBlock(chs[-1], chs[-1], emb_dim, groups)

        self.up_res = nn.ModuleList()
        self.up_attn = nn.ModuleList()
        self.up_cross = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        prev = chs[-1]
        for i, ch in enumerate(reversed(chs)):
            self.up_res.append(ResBlock(prev + ch, ch, emb_dim, groups))
            self.up_attn.append(SelfAttentionBlock(ch, groups, role == "denoising"))
            self.up_cross.append(CrossAttentionBlock(ch, text_dim, groups, role))
            if i < len(chs) - 1:
                self.upsamples.append(nn.Conv2d(ch, ch, 3, padding=1))
            prev = ch

        self.out_norm = nn.GroupNorm(_groups(groups, chs[0]), chs[0])
        self.conv_out = nn.Conv2d(chs[0], latent_channels, 3, padding=1)

    @property
    def num_self_attn_sites(self) -> int:
        return len(SELF_ATTN_SITES)

    def forward(self, z, t, text_tokens, class_vec=None, image_tokens=None,
                lam: float = 0.0, injected=None, beta: float = 0.0,
                structure_tokens=None, gamma: float = 0.0,
                fscm_sites=frozenset(), collect_features: bool = False,
                collect_attn: bool = False):
        """Noise prediction plus an aux dict.

        injected, when given, is one (B, N_i, C_i) feature sequence per
        self-attention site in SELF_ATTN_SITES order.  aux["features"] holds
        this network's own site token sequences (for the model-UNet role);
        aux["cond_attn"] maps site name to condition-branch attention
        weights when collect_attn is set.
        """
        if injected is not None and len(injected) != len(SELF_ATTN_SITES):
            raise ValueError(
                f"expected {len(SELF_ATTN_SITES)} injected feature maps, "
                f"got {len(injected)}")
        emb = self.time_mlp(sinusoidal_embedding(t, self.base_channels))
        if emb.shape[0] == 1 and z.shape[0] > 1:
            emb = emb.expand(z.shape[0], -1)
        if class_vec is not None:
            emb = emb + class_vec

        features = []
        attn_maps = {}

        def attend(h, attn_block, cross_block, site):
            inj = injected[len(features)] if injected is not None else None
            h, tokens, weights = attn_block(
                h, inj, beta, want_weights=collect_attn and inj is not None)
            features.append(tokens)
            if weights is not None:
                attn_maps[site] = weights
            h = cross_block(
                h, text_tokens, image_tokens=image_tokens, lam=lam,
                structure_tokens=structure_tokens if site in fscm_sites else None,
                gamma=gamma)
            return h

        h = self.conv_in(z)
        skips = []
        for i in range(len(self.down_res)):
            h = self.down_res[i](h, emb)
            h = attend(h, self.down_attn[i], self.down_cross[i], SELF_ATTN_SITES[i])
            skips.append(h)
            if i < len(self.downsamples):
                h = self.downsamples[i](h)

        h = self.mid_res1(h, emb)
        h = attend(h, self.mid_attn, self.mid_cross, "mid")
        h = self.mid_res2(h, emb)

        for i in range(len(self.up_res)):
            h = torch.cat([h, skips[-1 - i]], dim=1)
            h = self.up_res[i](h, emb)
            h = attend(h, self.up_attn[i], self.up_cross[i],
                       SELF_ATTN_SITES[len(self.down_res) + 1 + i])
            if i < len(self.upsamples):
                h = F.interpolate(h, scale_factor=2, mode="nearest")
                h = self.upsamples[i](h)

        eps = self.conv_out(F.silu(self.out_norm(h)))
        aux = {"features": features if collect_features else None,
               "cond_attn": attn_maps}
        return eps, aux
