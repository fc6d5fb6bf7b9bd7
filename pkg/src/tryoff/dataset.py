"""Paired dataset generation and on-disk layout.

Layout: ``<root>/<split>/<id>/{model.png, flat.png, mask.png, warped.png,
spec.json, prompts.json}`` plus ``<root>/manifest.json``.  Images are 8-bit
PNG, masks single-channel PNG in {0, 255}.  Every sample is generated from
its own child seed, so samples are independent and the whole tree is
byte-reproducible from (n, size, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .garments import (
    MASK_FILL_8BIT,
    GarmentSpec,
    make_prompts,
    render_dressed,
    render_flat,
    sample_pose,
    sample_spec,
    warp_garment,
)

MANIFEST_VERSION = "tryoff-dataset-1"
SAMPLE_FILES = ("model.png", "flat.png", "mask.png", "warped.png",
                "spec.json", "prompts.json")


@dataclass
class SamplePair:
    """One training example: person view, flat target, mask, warped garment."""

    x_m: np.ndarray           # (H, W, 3) dressed person
    x_c: np.ndarray           # (H, W, 3) flat garment on white
    m_c: np.ndarray           # (H, W) visible-garment mask in {0, 1}
    x_w: np.ndarray           # (H, W, 3) masked person image, mid-gray fill
    spec: GarmentSpec
    prompts: tuple            # (t_c, t_m, t_flat)


@dataclass
class DatasetManifest:
    version: str
    image_size: tuple
    count: int
    seed: int
    splits: dict              # split name -> list of sample ids
    samples: dict             # sample id -> {split, files: {name: relpath}}

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "image_size": list(self.image_size),
            "count": self.count,
            "seed": self.seed,
            "splits": self.splits,
            "samples": self.samples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(d["version"], tuple(d["image_size"]), d["count"], d["seed"],
                   d["splits"], d["samples"])

    def validate(self, root) -> None:
        root = Path(root)
        listed = [sid for ids in self.splits.values() for sid in ids]
        if len(listed) != self.count or set(listed) != set(self.samples):
            raise ValueError("manifest counts do not match sample table")
        for sid, entry in self.samples.items():
            for rel in entry["files"].values():
                if not (root / rel).exists():
                    raise FileNotFoundError(f"manifest lists missing file {rel}")


def save_image(path, img: np.ndarray) -> None:
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)


def save_mask(path, mask: np.ndarray) -> None:
    data = (mask > 0.5).astype(np.uint8) * 255
    Image.fromarray(data, mode="L").save(path)


def load_image(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32)
    return arr / np.float32(255.0)


def load_mask(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"), dtype=np.float32)
    return (arr > 127).astype(np.float32)


def make_sample(sample_seed: int, size: int) -> SamplePair:
    """Render one fully paired example from a single integer seed."""
    spec = sample_spec(sample_seed)
    pose = sample_pose(sample_seed)
    rng = np.random.default_rng(sample_seed + 15485863)
    occlusion = float(rng.uniform(0.2, 0.8))

    x_c = render_flat(spec, size)
    x_m, m_c = render_dressed(spec, pose, occlusion, size)
    # 8-bit mid-gray fill so the stored pair stays exactly self-consistent
    x_w = warp_garment(x_m, m_c, fill=MASK_FILL_8BIT)
    return SamplePair(x_m, x_c, m_c, x_w, spec, make_prompts(spec))


def generate_dataset(n: int, size, seed: int, out) -> DatasetManifest:
    """Write n samples under out/ and return the validated manifest."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(size, (tuple, list)):
        if size[0] != size[1]:
            raise ValueError("only square canvases are supported")
        size = size[0]
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)

    child_seeds = [int(s.generate_state(1)[0]) for s in
                   np.random.SeedSequence(seed).spawn(n)]
    n_train = max(1, int(round(n * 0.9))) if n > 1 else 1
    splits = {"train": [], "test": []}
    samples = {}
    for i in range(n):
        split = "train" if i < n_train else "test"
        sid = f"{i:05d}"
        sample = make_sample(child_seeds[i], size)
        sample_dir = root / split / sid
        sample_dir.mkdir(parents=True, exist_ok=True)
        save_image(sample_dir / "model.png", sample.x_m)
        save_image(sample_dir / "flat.png", sample.x_c)
        save_mask(sample_dir / "mask.png", sample.m_c)
        save_image(sample_dir / "warped.png", sample.x_w)
        (sample_dir / "spec.json").write_text(
            json.dumps(sample.spec.to_dict(), sort_keys=True, indent=1))
        t_c, t_m, t_flat = sample.prompts
        (sample_dir / "prompts.json").write_text(
            json.dumps({"t_c": t_c, "t_m": t_m, "t_flat": t_flat},
                       sort_keys=True, indent=1))
        splits[split].append(sid)
        samples[sid] = {
            "split": split,
            "files": {name: f"{split}/{sid}/{name}" for name in SAMPLE_FILES},
        }

    manifest = DatasetManifest(MANIFEST_VERSION, (size, size), n, seed,
                               splits, samples)
    (root / "manifest.json").write_text(
        json.dumps(manifest.to_dict(), sort_keys=True, indent=1))
    manifest.validate(root)
    return manifest


def load_manifest(root) -> DatasetManifest:
    manifest = DatasetManifest.from_dict(
        json.loads((Path(root) / "manifest.json").read_text()))
    if manifest.version != MANIFEST_VERSION:
        raise ValueError(f"unsupported dataset version {manifest.version!r}")
    return manifest


def load_sample(root, sample_id: str, manifest: DatasetManifest = None) -> SamplePair:
    manifest = manifest or load_manifest(root)
    entry = manifest.samples[sample_id]
    d = Path(root) / entry["split"] / sample_id
    spec = GarmentSpec.from_dict(json.loads((d / "spec.json").read_text()))
    prompts = json.loads((d / "prompts.json").read_text())
    return SamplePair(
        x_m=load_image(d / "model.png"),
        x_c=load_image(d / "flat.png"),
        m_c=load_mask(d / "mask.png"),
        x_w=load_image(d / "warped.png"),
        spec=spec,
        prompts=(prompts["t_c"], prompts["t_m"], prompts["t_flat"]),
    )


def load_split(root, split: str) -> list:
    manifest = load_manifest(root)
    return [load_sample(root, sid, manifest) for sid in manifest.splits[split]]
