"""Experiment configuration: one flat key = value text file covering every knob.

File format: one ``key = value`` assignment per line, ``#`` starts a comment,
blank lines ignored.  Values are parsed according to the field types below;
``dream_p`` additionally accepts the string ``inf`` (DREAM disabled).
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

FSCM_POSITIONS = ("down0", "down1", "down2", "mid", "up1", "up2", "up3", "all")
CUE_SOURCES = ("gcbm", "oracle", "none")
FSCM_VARIANTS = ("full", "M1", "M2", "M3")


@dataclass
class ExperimentConfig:
    # data
    image_size: int = 64
    dataset_n: int = 256
    dataset_seed: int = 0
    train_fraction: float = 0.9

    # latent codec
    latent_downscale: int = 4

    # toy encoders
    encoder_dim: int = 64          # D_img: image-token / cue feature width
    encoder_patch: int = 8
    encoder_depth: int = 2
    encoder_heads: int = 4
    pooled_dim: int = 64           # D_pool
    text_dim: int = 64             # D_txt
    text_len: int = 16             # token positions per prompt

    # diffusion schedule (shared by image latents and garment-cue features)
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    ddim_steps: int = 50
    gcbm_sample_steps: int = 50

    # garment cue prior
    gcbm_depth: int = 4
    gcbm_heads: int = 4

    # UNets
    unet_base_channels: int = 32
    unet_channel_mults: tuple = (1, 2, 4)
    unet_groupnorm_groups: int = 8
    fscm_position: str = "down0"
    fscm_heads: int = 4
    use_class_embedding: bool = True

    # conditioning strengths and ablation switches
    lam: float = 1.0               # model-UNet image-branch weight
    beta: float = 1.0              # injected-feature branch weight
    gamma: float = 1.0             # structure-guidance branch weight
    cues_source: str = "gcbm"      # gcbm | oracle | none
    premask_injected: bool = True  # gate injected features by the cloth mask
    focus_loss_weight: float = 0.0
    use_text: bool = True
    fscm_variant: str = "full"     # full | M1 | M2 | M3

    # DREAM / guidance
    dream_p: float = 1.0           # math.inf disables DREAM
    cfg_w: float = 3.0

    # optimization
    lr: float = 1e-5
    weight_decay: float = 0.01
    batch_size_stage1: int = 32
    batch_size_stage2: int = 8
    steps_stage1: int = 2000
    steps_stage2: int = 3000
    stage1_train_encoder: bool = True
    uncond_prob: float = 0.0       # conditioning dropout for CFG training
    save_every: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.image_size % self.latent_downscale != 0:
            raise ValueError("image_size must be divisible by latent_downscale")
        if self.image_size % self.encoder_patch != 0:
            raise ValueError("image_size must be divisible by encoder_patch")
        if self.fscm_position not in FSCM_POSITIONS:
            raise ValueError(f"unknown fscm_position {self.fscm_position!r}")
        if self.cues_source not in CUE_SOURCES:
            raise ValueError(f"unknown cues_source {self.cues_source!r}")
        if self.fscm_variant not in FSCM_VARIANTS:
            raise ValueError(f"unknown fscm_variant {self.fscm_variant!r}")
        if isinstance(self.unet_channel_mults, str):
            self.unet_channel_mults = tuple(
                int(v) for v in self.unet_channel_mults.split(",") if v.strip()
            )
        else:
            self.unet_channel_mults = tuple(self.unet_channel_mults)
        if not (self.dream_p >= 0 or math.isinf(self.dream_p)):
            raise ValueError("dream_p must be >= 0 or inf")
        if self.cfg_w < 0:
            raise ValueError("cfg_w must be >= 0")
        for name in ("lam", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    # -- derived quantities -------------------------------------------------

    @property
    def latent_channels(self) -> int:
        return 3 * self.latent_downscale**2

    @property
    def latent_size(self) -> int:
        return self.image_size // self.latent_downscale

    @property
    def num_image_tokens(self) -> int:
        return (self.image_size // self.encoder_patch) ** 2

    # -- serialization ------------------------------------------------------

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name} = {_format_value(value)}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in known:
                raise ValueError(f"line {lineno}: unknown config key {key!r}")
            values[key] = _parse_value(value.strip(), getattr(cls, key, None))
        return cls(**values)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def training_hash(self) -> str:
        """Hash over keys that affect training; inference-only knobs excluded."""
        skip = {"cfg_w", "ddim_steps", "save_every"}
        lines = [
            f"{f.name} = {_format_value(getattr(self, f.name))}"
            for f in dataclasses.fields(self)
            if f.name not in skip
        ]
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, str) else str(value)


def _parse_value(text: str, default):
    text = text.strip().strip("'\"")
    if isinstance(default, bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected boolean, got {text!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        return int(text)
    if isinstance(default, float):
        return math.inf if text.lower() == "inf" else float(text)
    if isinstance(default, tuple):
        return tuple(int(v) for v in text.split(",") if v.strip())
    return text
