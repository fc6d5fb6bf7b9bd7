"""Desk-scale virtual try-off: reconstruct catalog flat-lay garments from
dressed-person views with a garment-cue diffusion prior and a
flat-structure-constrained conditional diffusion model, trained end-to-end
on procedurally generated synthetic pairs."""

from .config import ExperimentConfig
from .dataset import SamplePair, generate_dataset, load_sample, load_split
from .diffusion import NoiseSchedule, cfg_combine, ddim_step, dream_rectify, forward_noise
from .garments import GarmentSpec, make_prompts, render_dressed, render_flat, warp_garment
from .metrics import evaluate, psnr, ssim, toy_fid, toy_kid
from .pipeline import TryOffSystem, load_checkpoint, save_checkpoint, train_stage1, train_stage2

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "GarmentSpec",
    "NoiseSchedule",
    "SamplePair",
    "TryOffSystem",
    "cfg_combine",
    "ddim_step",
    "dream_rectify",
    "evaluate",
    "forward_noise",
    "generate_dataset",
    "load_checkpoint",
    "load_sample",
    "load_split",
    "make_prompts",
    "psnr",
    "render_dressed",
    "render_flat",
    "save_checkpoint",
    "ssim",
    "toy_fid",
    "toy_kid",
    "train_stage1",
    "train_stage2",
    "warp_garment",
]
