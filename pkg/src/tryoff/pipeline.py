"""End-to-end system wiring: conditioning assembly, two-stage training, and
the try-off sampling pipeline.

Stage 1 trains the garment-cue prior (optionally jointly with the toy image
encoder).  Stage 2 trains the model UNet, the pooled-image projection, and
the small learnable subset of the denoising UNet (class embedding, flat
structure module, the structure k/v at the insertion stage, and the
injected-feature k/v in every hybrid self-attention); everything else in the
denoising UNet stays frozen.
"""

from __future__ import annotations

import hashlib
import math
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .attention import aggregate_attention_map, mask_inject, resize_nearest
from .codecs import ImageEncoder, LatentCodec, PooledProjection, TextEncoder, image_to_tensor
from .config import ExperimentConfig
from .dataset import SamplePair
from .diffusion import (
    NoiseSchedule,
    cfg_combine,
    ddim_step,
    ddim_timestep_pairs,
    dream_rectify,
    forward_noise,
)
from .garments import CATEGORIES, flat_prefixed_prompt
from .gcbm import GarmentCuePrior
from .unet import SELF_ATTN_SITES, SITE_TO_CROSS_PATH, ConditionalUNet, FlatStructureModule

CHECKPOINT_VERSION = 1

MODULE_NAMES = ("image_encoder", "text_encoder", "pooled_proj", "gcbm",
                "fscm", "model_unet", "denoising_unet")


@dataclass
class TrainingBatch:
    """Constant per-sample tensors for stage-2 steps (encoders are frozen)."""

    z_c: torch.Tensor        # (B, C, h, w) flat-garment latent
    z_m: torch.Tensor        # (B, C, h, w) person latent
    t_c: torch.Tensor        # (B, L, D) appearance text embedding
    t_m: torch.Tensor        # (B, L, D) model text embedding
    t_flat: torch.Tensor     # (B, L, D) flat-template text embedding
    i_m: torch.Tensor        # (B, D_pool) pooled person embedding
    f_c: torch.Tensor        # (B, N, D_img) garment cues
    mask: torch.Tensor       # (B, H, W) cloth-agnostic mask
    class_ids: torch.Tensor  # (B,) garment-category index

    def select(self, idx) -> "TrainingBatch":
        return TrainingBatch(*(getattr(self, f.name)[idx]
                               for f in self.__dataclass_fields__.values()))

    def __len__(self) -> int:
        return self.z_c.shape[0]


@dataclass
class ConditioningBundle:
    """Everything the denoising UNet consumes for one sample batch."""

    t_c: torch.Tensor
    t_flat: torch.Tensor
    f_c: torch.Tensor
    mask: torch.Tensor
    class_ids: Optional[torch.Tensor]
    injected: Optional[list]            # per self-attn site, mask-gated
    z_fc: Optional[torch.Tensor]        # flat-structure tokens (or None)


@dataclass
class TrainState:
    """Stage-2 optimizer state with the explicit parameter partition."""

    trainable: dict
    frozen: dict
    optimizer: torch.optim.Optimizer
    step: int = 0


class TryOffSystem:
    """All modules plus the shared noise schedule, wired per one config."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        torch.manual_seed(config.seed)
        self.sched = NoiseSchedule.linear(config.timesteps, config.beta_start,
                                          config.beta_end)
        self.codec = LatentCodec(config.latent_downscale)
        self.image_encoder = ImageEncoder(config.image_size, config.encoder_patch,
                                          config.encoder_dim, config.encoder_depth,
                                          config.encoder_heads)
        self.text_encoder = TextEncoder(config.text_dim, config.text_len)
        self.pooled_proj = PooledProjection(config.pooled_dim, config.text_dim)
        self.gcbm = GarmentCuePrior(config.encoder_dim, config.gcbm_depth,
                                    config.gcbm_heads)
        self.fscm = FlatStructureModule(config.encoder_dim, config.text_dim,
                                        config.fscm_heads)
        self.model_unet = ConditionalUNet(
            config.latent_channels, config.unet_base_channels,
            config.unet_channel_mults, config.unet_groupnorm_groups,
            config.text_dim, role="model")
        self.denoising_unet = ConditionalUNet(
            config.latent_channels, config.unet_base_channels,
            config.unet_channel_mults, config.unet_groupnorm_groups,
            config.text_dim, role="denoising",
            num_classes=len(CATEGORIES) if config.use_class_embedding else None)

    # -- parameter bookkeeping -------------------------------------------

    def modules_by_name(self) -> dict:
        return {name: getattr(self, name) for name in MODULE_NAMES}

    def named_parameters(self):
        for mod_name, module in self.modules_by_name().items():
            for name, p in module.named_parameters():
                yield f"{mod_name}.{name}", p

    def fscm_sites(self) -> frozenset:
        pos = self.config.fscm_position
        return frozenset(SELF_ATTN_SITES) if pos == "all" else frozenset([pos])

    def stage2_partition(self):
        """(trainable, frozen) parameter dicts for the conditional stage."""
        struct_names = {
            f"denoising_unet.{SITE_TO_CROSS_PATH[s]}.{w}"
            for s in self.fscm_sites() for w in ("w_k_struct", "w_v_struct")
        }
        trainable, frozen = {}, {}
        for name, p in self.named_parameters():
            if name.startswith(("model_unet.", "pooled_proj.", "fscm.")):
                trainable[name] = p
            elif name.startswith("denoising_unet.class_embedding."):
                trainable[name] = p
            elif name.endswith((".w_k_cond", ".w_v_cond")) and \
                    name.startswith("denoising_unet."):
                trainable[name] = p
            elif name in struct_names:
                trainable[name] = p
            else:
                frozen[name] = p
        return trainable, frozen

    def stage1_partition(self):
        trainable, frozen = {}, {}
        for name, p in self.named_parameters():
            joint = self.config.stage1_train_encoder and name.startswith("image_encoder.")
            if name.startswith("gcbm.") or joint:
                trainable[name] = p
            else:
                frozen[name] = p
        return trainable, frozen

    def parameters_hash(self, names=None) -> str:
        h = hashlib.sha256()
        for name, p in sorted(self.named_parameters()):
            if names is not None and name not in names:
                continue
            h.update(name.encode())
            h.update(str(tuple(p.shape)).encode())
            h.update(p.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()

    # -- encoding helpers --------------------------------------------------

    def encode_latents(self, images) -> torch.Tensor:
        """List of (H, W, 3) float images -> (B, C, h, w) float32 latents."""
        lats = [self.codec.encode(np.asarray(img)) for img in images]
        return torch.from_numpy(np.stack(lats)).float()

    def decode_latent(self, latent: torch.Tensor) -> np.ndarray:
        img = self.codec.decode(latent.detach().cpu().numpy().astype(np.float64))
        return np.clip(img, 0.0, 1.0)

    def image_tokens(self, images) -> tuple:
        batch = torch.stack([image_to_tensor(np.asarray(img)) for img in images])
        return self.image_encoder(batch)

    def text_embed(self, prompts) -> torch.Tensor:
        return self.text_encoder.encode_batch(list(prompts))

    def null_text(self, batch_size: int) -> torch.Tensor:
        return self.text_encoder.encode_batch([""] * batch_size)

    def variant_prompts(self, sample: SamplePair) -> tuple:
        """(t_c, t_m, t_flat) prompt strings after ablation rewrites."""
        t_c, t_m, t_flat = sample.prompts
        cfg = self.config
        if cfg.fscm_variant == "M3":
            t_c = flat_prefixed_prompt(t_c, sample.spec)
        if cfg.fscm_variant == "M1":
            t_c = ""
        if not cfg.use_text:
            t_c, t_m = "", ""
        return t_c, t_m, t_flat

    # -- conditioning assembly ----------------------------------------------

    def compute_cues(self, samples, source: str = None, seed: int = 0,
                     seeds=None, steps: int = None) -> torch.Tensor:
        """Garment-cue tokens per sample: prior samples, oracle encoder
        tokens of the flat target, or zeros.

        In "gcbm" mode each sample's initial feature noise comes from its
        own generator (seed + index, or the explicit per-sample seeds), so
        cue values do not depend on how samples are batched together.
        """
        source = source or self.config.cues_source
        n = len(samples)
        shape = (n, self.config.num_image_tokens, self.config.encoder_dim)
        if source == "none":
            return torch.zeros(shape)
        if source == "oracle":
            with torch.no_grad():
                tokens, _ = self.image_tokens([s.x_c for s in samples])
            return tokens
        if source != "gcbm":
            raise ValueError(f"unknown cues source {source!r}")
        with torch.no_grad():
            f_w, _ = self.image_tokens([s.x_w for s in samples])
            f_m, _ = self.image_tokens([s.x_m for s in samples])
        if seeds is None:
            seeds = [seed + i for i in range(n)]
        noise = torch.empty(shape)
        for i in range(n):
            gen = torch.Generator().manual_seed(seeds[i])
            noise[i] = torch.randn(shape[1:], generator=gen)
        return self._gcbm_denoise(f_w, f_m, noise, steps)

    def _gcbm_denoise(self, f_w, f_m, noise, steps=None) -> torch.Tensor:
        from .diffusion import eps_from_x0
        steps = steps or self.config.gcbm_sample_steps
        x = noise
        with torch.no_grad():
            for t, t_prev in ddim_timestep_pairs(self.sched.timesteps, steps):
                pred = self.gcbm(f_w, f_m, x, t)
                eps_hat = eps_from_x0(x, pred, t, self.sched)
                ab_prev = self.sched.alpha_bar(t_prev)
                x = math.sqrt(ab_prev) * pred + math.sqrt(1.0 - ab_prev) * eps_hat
        return x

    def build_training_batch(self, samples, cues: torch.Tensor) -> TrainingBatch:
        prompts = [self.variant_prompts(s) for s in samples]
        with torch.no_grad():
            _, pooled = self.image_tokens([s.x_m for s in samples])
        return TrainingBatch(
            z_c=self.encode_latents([s.x_c for s in samples]),
            z_m=self.encode_latents([s.x_m for s in samples]),
            t_c=self.text_embed([p[0] for p in prompts]).detach(),
            t_m=self.text_embed([p[1] for p in prompts]).detach(),
            t_flat=self.text_embed([p[2] for p in prompts]).detach(),
            i_m=pooled,
            f_c=cues,
            mask=torch.stack([torch.from_numpy(np.asarray(s.m_c, dtype=np.float32))
                              for s in samples]),
            class_ids=torch.tensor([CATEGORIES.index(s.spec.category)
                                    for s in samples], dtype=torch.long),
        )

    def model_injection(self, z_m, t_m, i_m, mask, collect_attn=False):
        """One noise-free model-UNet pass at t = 0; per-site features, gated
        by the resized cloth mask unless the focus-loss variant disables
        pre-masking."""
        image_tokens = self.pooled_proj(i_m)[:, None, :]
        _, aux = self.model_unet(z_m, 0, t_m, image_tokens=image_tokens,
                                 lam=self.config.lam, collect_features=True)
        features = aux["features"]
        if self.config.premask_injected:
            features = [mask_inject(f, mask) for f in features]
        return features

    def structure_tokens(self, f_c, t_flat):
        variant = self.config.fscm_variant
        if variant == "M3":
            return None
        if variant == "M2":
            return t_flat
        return self.fscm(f_c, t_flat)

    def effective_gamma(self) -> float:
        return 0.0 if self.config.fscm_variant == "M3" else self.config.gamma

    def class_vec(self, class_ids):
        if self.denoising_unet.class_embedding is None or class_ids is None:
            return None
        return self.denoising_unet.class_embedding(class_ids)

    def denoise(self, z_t, t, bundle: ConditioningBundle, collect_attn=False):
        """Conditional noise prediction for one latent batch."""
        eps, aux = self.denoising_unet(
            z_t, t, bundle.t_c,
            class_vec=self.class_vec(bundle.class_ids),
            injected=bundle.injected, beta=self.config.beta,
            structure_tokens=bundle.z_fc, gamma=self.effective_gamma(),
            fscm_sites=self.fscm_sites(), collect_attn=collect_attn)
        return eps, aux

    def denoise_unconditional(self, z_t, t):
        """All conditioning removed: empty text, no injection, no structure."""
        eps, _ = self.denoising_unet(
            z_t, t, self.null_text(z_t.shape[0]),
            class_vec=None, injected=None, beta=self.config.beta,
            structure_tokens=None, gamma=self.effective_gamma(),
            fscm_sites=self.fscm_sites())
        return eps

    def training_bundle(self, batch: TrainingBatch,
                        unconditional: bool = False) -> ConditioningBundle:
        if unconditional:
            b = len(batch)
            return ConditioningBundle(self.null_text(b), batch.t_flat,
                                      batch.f_c, batch.mask, None, None, None)
        injected = self.model_injection(batch.z_m, batch.t_m, batch.i_m, batch.mask)
        return ConditioningBundle(
            t_c=batch.t_c, t_flat=batch.t_flat, f_c=batch.f_c, mask=batch.mask,
            class_ids=batch.class_ids, injected=injected,
            z_fc=self.structure_tokens(batch.f_c, batch.t_flat))

    # -- losses --------------------------------------------------------------

    def stage2_loss(self, batch: TrainingBatch, t, eps,
                    unconditional: bool = False):
        """DREAM-rectified noise-prediction loss on one batch.

        The rectification prediction comes from an extra stop-gradient
        forward pass; with p = inf the loss is bit-identical to the plain
        diffusion loss on the same inputs.
        """
        cfg = self.config
        z_t = forward_noise(batch.z_c, t, eps, self.sched)
        if math.isinf(cfg.dream_p):
            z_hat, eps_hat = z_t, eps
        else:
            with torch.no_grad():
                bundle_sg = self.training_bundle(batch, unconditional)
                eps_sg, _ = self.denoise(z_t, t, bundle_sg)
            z_hat, eps_hat = dream_rectify(z_t, eps, eps_sg, t, cfg.dream_p,
                                           self.sched)
        bundle = self.training_bundle(batch, unconditional)
        want_maps = cfg.focus_loss_weight > 0 and not unconditional
        eps_pred, aux = self.denoise(z_hat, t, bundle, collect_attn=want_maps)
        loss = F.mse_loss(eps_pred, eps_hat)
        logs = {"diffusion_loss": float(loss.detach())}
        if want_maps:
            focus = self.focus_loss(aux["cond_attn"], batch.mask)
            logs["focus_loss"] = float(focus.detach())
            loss = loss + cfg.focus_loss_weight * focus
        return loss, logs

    def focus_loss(self, cond_attn: dict, masks: torch.Tensor) -> torch.Tensor:
        """Spatial focusing penalty: aggregated condition-branch response
        maps, resized to mask resolution, MSE against the cloth mask,
        averaged over layers and batch."""
        size = masks.shape[-2:]
        terms = []
        for site, weights in cond_attn.items():
            for b in range(weights.shape[0]):
                m = aggregate_attention_map(weights[b])
                terms.append(((resize_nearest(m, size) - masks[b]) ** 2).mean())
        return torch.stack(terms).mean()

    # -- sampling --------------------------------------------------------------

    def inference_bundle(self, sample: SamplePair, cues: torch.Tensor = None,
                         cue_seed: int = 0) -> ConditioningBundle:
        if cues is None:
            cues = self.compute_cues([sample], seed=cue_seed)
        t_c_str, t_m_str, t_flat_str = self.variant_prompts(sample)
        t_c = self.text_embed([t_c_str])
        t_m = self.text_embed([t_m_str])
        t_flat = self.text_embed([t_flat_str])
        with torch.no_grad():
            _, pooled = self.image_tokens([sample.x_m])
            z_m = self.encode_latents([sample.x_m])
            mask = torch.from_numpy(np.asarray(sample.m_c, dtype=np.float32))[None]
            injected = self.model_injection(z_m, t_m, pooled, mask)
            z_fc = self.structure_tokens(cues, t_flat)
        class_ids = torch.tensor([CATEGORIES.index(sample.spec.category)])
        return ConditioningBundle(t_c, t_flat, cues, mask, class_ids,
                                  injected, z_fc)

    @torch.no_grad()
    def try_off(self, sample: SamplePair, w: float = None, steps: int = None,
                seed: int = 0, cues: torch.Tensor = None,
                dump_attention: str = None):
        """Reconstruct the flat garment from a person view.

        Deterministic given the seed: the seed drives the cue-prior noise
        (when cues are not supplied) and the initial latent noise.  w = 1
        skips the unconditional branch entirely, so the output is exactly
        conditional-only sampling.
        """
        cfg = self.config
        w = cfg.cfg_w if w is None else w
        steps = steps or cfg.ddim_steps
        gen = torch.Generator().manual_seed(seed)
        if cues is None and cfg.cues_source == "gcbm":
            f_w, _ = self.image_tokens([sample.x_w])
            f_m, _ = self.image_tokens([sample.x_m])
            noise = torch.randn(f_w.shape, generator=gen)
            cues = self._gcbm_denoise(f_w, f_m, noise)
        bundle = self.inference_bundle(sample, cues=cues)

        shape = (1, cfg.latent_channels, cfg.latent_size, cfg.latent_size)
        z = torch.randn(shape, generator=gen)
        attn_dump = None
        pairs = ddim_timestep_pairs(self.sched.timesteps, steps)
        for k, (t, t_prev) in enumerate(pairs):
            collect = dump_attention is not None and k == len(pairs) - 1
            eps_c, aux = self.denoise(z, t, bundle, collect_attn=collect)
            if collect:
                attn_dump = aux["cond_attn"].get(dump_attention)
            if w == 1.0:
                eps = eps_c
            else:
                eps_u = self.denoise_unconditional(z, t)
                eps = cfg_combine(eps_u, eps_c, w)
            z = ddim_step(z, eps, t, t_prev, self.sched)
        image = self.decode_latent(z[0])
        if dump_attention is not None:
            return image, attn_dump
        return image


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

def cue_seed_for(sample_index: int, base_seed: int) -> int:
    return base_seed + sample_index


def train_stage1(system: TryOffSystem, samples, steps: int = None,
                 lr: float = None, out_path=None):
    """Train the garment-cue prior (optionally jointly with the image
    encoder) on encoder features of the paired renders."""
    cfg = system.config
    steps = steps or cfg.steps_stage1
    lr = lr if lr is not None else cfg.lr
    trainable, frozen = system.stage1_partition()
    for p in frozen.values():
        p.requires_grad_(False)
    for p in trainable.values():
        p.requires_grad_(True)
    opt = torch.optim.AdamW(trainable.values(), lr=lr,
                            weight_decay=cfg.weight_decay)
    gen = torch.Generator().manual_seed(cfg.seed + 11)

    x_w = torch.stack([image_to_tensor(s.x_w) for s in samples])
    x_m = torch.stack([image_to_tensor(s.x_m) for s in samples])
    x_c = torch.stack([image_to_tensor(s.x_c) for s in samples])

    history = []
    for step in range(1, steps + 1):
        idx = torch.randint(len(samples), (min(cfg.batch_size_stage1, len(samples)),),
                            generator=gen)
        f_w, _ = system.image_encoder(x_w[idx])
        f_m, _ = system.image_encoder(x_m[idx])
        f_c, _ = system.image_encoder(x_c[idx])
        if not cfg.stage1_train_encoder:
            f_w, f_m, f_c = f_w.detach(), f_m.detach(), f_c.detach()
        t = torch.randint(1, cfg.timesteps + 1, (len(idx),), generator=gen)
        eps = torch.randn(f_c.shape, generator=gen)
        loss = system.gcbm.loss(f_c, f_w, f_m, eps, t, system.sched)
        if not torch.isfinite(loss):
            raise RuntimeError(f"stage-1 loss is not finite at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(float(loss.detach()))
    if out_path is not None:
        save_checkpoint(out_path, system, stage=1,
                        extra={"history": history, "step": steps})
    return history


def train_stage2(system: TryOffSystem, samples, steps: int = None,
                 lr: float = None, out_dir=None, cues: torch.Tensor = None):
    """Conditional-diffusion stage: DREAM-wrapped noise loss, AdamW over the
    stage-2 trainable partition, frozen weights enforced by construction."""
    cfg = system.config
    steps = steps or cfg.steps_stage2
    lr = lr if lr is not None else cfg.lr
    if cues is None:
        cues = system.compute_cues(samples, seed=cfg.seed)
    batch_full = system.build_training_batch(samples, cues)
    state = stage2_train_state(system, lr=lr)
    gen = torch.Generator().manual_seed(cfg.seed + 23)

    history = []
    for step in range(1, steps + 1):
        idx = torch.randint(len(samples), (min(cfg.batch_size_stage2, len(samples)),),
                            generator=gen)
        batch = batch_full.select(idx)
        t = torch.randint(1, cfg.timesteps + 1, (len(idx),), generator=gen)
        eps = torch.randn(batch.z_c.shape, generator=gen)
        drop = cfg.uncond_prob > 0 and \
            float(torch.rand((), generator=gen)) < cfg.uncond_prob
        loss, logs = system.stage2_loss(batch, t, eps, unconditional=drop)
        if not torch.isfinite(loss):
            raise RuntimeError(
                f"stage-2 loss is not finite at step {step}: {logs}")
        state.optimizer.zero_grad()
        loss.backward()
        state.optimizer.step()
        state.step = step
        history.append(float(loss.detach()))
        if out_dir is not None and cfg.save_every and step % cfg.save_every == 0:
            save_checkpoint(Path(out_dir) / f"stage2_step{step:06d}.pt",
                            system, stage=2,
                            extra={"history": history, "step": step})
    if out_dir is not None:
        save_checkpoint(Path(out_dir) / "stage2.pt", system, stage=2,
                        extra={"history": history, "step": steps})
    return history, state


def stage2_train_state(system: TryOffSystem, lr: float = None) -> TrainState:
    cfg = system.config
    trainable, frozen = system.stage2_partition()
    for p in frozen.values():
        p.requires_grad_(False)
    for p in trainable.values():
        p.requires_grad_(True)
    opt = torch.optim.AdamW(trainable.values(),
                            lr=cfg.lr if lr is None else lr,
                            weight_decay=cfg.weight_decay)
    return TrainState(trainable, frozen, opt)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, system: TryOffSystem, stage: int, extra: dict = None):
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "stage": stage,
        "config": system.config.to_text(),
        "state": {name: module.state_dict()
                  for name, module in system.modules_by_name().items()},
    }
    payload.update(extra or {})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


def load_checkpoint(path):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version in {path}")
    config = ExperimentConfig.from_text(payload["config"])
    system = TryOffSystem(config)
    for name, module in system.modules_by_name().items():
        module.load_state_dict(payload["state"][name])
    return system, payload


def load_system_with_config(path, config: ExperimentConfig) -> TryOffSystem:
    """Rebuild under a (possibly ablated) config but keep stored weights."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    system = TryOffSystem(config)
    for name, module in system.modules_by_name().items():
        stored = payload["state"][name]
        if name == "denoising_unet" and system.denoising_unet.class_embedding is None:
            stored = {k: v for k, v in stored.items()
                      if not k.startswith("class_embedding.")}
        module.load_state_dict(stored, strict=False)
    return system


# ---------------------------------------------------------------------------
# cue cache (binary per-sample tensors reused by stage 2 / evaluation)
# ---------------------------------------------------------------------------

def cue_cache_dir(root, split: str) -> Path:
    return Path(root) / "cues" / split


def cue_cache_key(system: TryOffSystem, seed: int) -> str:
    weights = system.parameters_hash(
        names={n for n, _ in system.named_parameters()
               if n.startswith(("gcbm.", "image_encoder."))})
    return hashlib.sha256(f"{weights}:{seed}".encode()).hexdigest()[:12]


def cached_cues(system: TryOffSystem, root, split: str, ids, samples,
                seed: int = 0) -> torch.Tensor:
    """Load per-sample cue tensors, computing and storing any that are missing."""
    cache = cue_cache_dir(root, split)
    cache.mkdir(parents=True, exist_ok=True)
    key = cue_cache_key(system, seed)
    out = []
    missing = []
    for i, sid in enumerate(ids):
        path = cache / f"{sid}_{key}.npy"
        if path.exists():
            out.append(torch.from_numpy(np.load(path)))
        else:
            out.append(None)
            missing.append(i)
    if missing:
        base = seed + int(zlib.crc32(split.encode()) % 1000)
        computed = system.compute_cues(
            [samples[i] for i in missing], source="gcbm",
            seeds=[base + i for i in missing])
        for j, i in enumerate(missing):
            out[i] = computed[j]
            np.save(cache / f"{ids[i]}_{key}.npy", computed[j].numpy())
    return torch.stack(out)
