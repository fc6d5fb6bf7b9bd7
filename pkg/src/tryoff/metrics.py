"""Reconstruction and distribution metrics plus the evaluation driver.

PSNR and SSIM compare single image pairs; the distribution metrics fit the
pooled features of the frozen toy image encoder (so absolute values are not
comparable to numbers computed over pretrained perceptual networks).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 7
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

METRIC_COLUMNS = ("fid", "kid", "psnr_db", "ssim")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) for [0, 1] images, capped at 99 dB."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img.mean(axis=2) if img.ndim == 3 else img


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM with a 7x7 uniform window on [0, 1] images.

    Color inputs are converted to grayscale by channel mean.  Population
    (ddof = 0) window moments; a pair of zero-variance windows contributes a
    contrast/structure factor of exactly 1 through the C2 constant.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    x = _to_gray(a)
    y = _to_gray(b)
    w = SSIM_WINDOW
    if x.shape[0] < w or x.shape[1] < w:
        raise ValueError(f"image smaller than the {w}x{w} SSIM window")
    xw = np.lib.stride_tricks.sliding_window_view(x, (w, w))
    yw = np.lib.stride_tricks.sliding_window_view(y, (w, w))
    mx = xw.mean(axis=(-2, -1))
    my = yw.mean(axis=(-2, -1))
    vx = (xw**2).mean(axis=(-2, -1)) - mx**2
    vy = (yw**2).mean(axis=(-2, -1)) - my**2
    cov = (xw * yw).mean(axis=(-2, -1)) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mx**2 + my**2 + SSIM_C1) * (vx + vy + SSIM_C2)
    return float(np.mean(num / den))


def _fit_gaussian(feats: np.ndarray):
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 2:
        raise ValueError("need a (n >= 2, d) feature matrix")
    return feats.mean(axis=0), np.cov(feats, rowvar=False, ddof=1)


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def toy_fid(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    tr((Sa Sb)^(1/2)) is computed through the symmetric product
    sqrt(Sa) Sb sqrt(Sa) with eigenvalues clamped at zero; tiny negative
    results from roundoff are clamped to 0.
    """
    mu_a, cov_a = _fit_gaussian(feats_a)
    mu_b, cov_b = _fit_gaussian(feats_b)
    sa = _psd_sqrt(cov_a)
    inner = sa @ cov_b @ sa
    vals = np.clip(np.linalg.eigvalsh((inner + inner.T) / 2), 0.0, None)
    tr_sqrt = float(np.sum(np.sqrt(vals)))
    fid = float(np.sum((mu_a - mu_b) ** 2)
                + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt)
    return max(fid, 0.0)


def _poly_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    return (x @ y.T / d + 1.0) ** 3


def toy_kid(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """Unbiased MMD^2 with the cubic polynomial kernel (x.y / d + 1)^3."""
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("need (n >= 2, d) feature matrices")
    m, n = a.shape[0], b.shape[0]
    k_aa = _poly_kernel(a, a)
    k_bb = _poly_kernel(b, b)
    k_ab = _poly_kernel(a, b)
    term_a = (k_aa.sum() - np.trace(k_aa)) / (m * (m - 1))
    term_b = (k_bb.sum() - np.trace(k_bb)) / (n * (n - 1))
    return float(term_a + term_b - 2.0 * k_ab.mean())


# ---------------------------------------------------------------------------
# evaluation driver
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    split: str
    seeds: list
    config_hash: str
    sample_count: int
    overall: dict                  # metric name -> value
    per_category: dict             # category -> {metric: value, "count": n}

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "seeds": list(self.seeds),
            "config_hash": self.config_hash,
            "sample_count": self.sample_count,
            "overall": self.overall,
            "per_category": self.per_category,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def to_table(self, label: str = "overall") -> str:
        rows = [(label, self.overall)]
        rows += [(cat, vals) for cat, vals in sorted(self.per_category.items())]
        return format_metric_table(rows)


def format_metric_table(rows) -> str:
    """Aligned plain-text table in the familiar benchmark layout."""
    header = f"{'Method':<18}" + "".join(
        f"{name.replace('_db', '').upper():>9}" for name in METRIC_COLUMNS)
    lines = [header, "-" * len(header)]
    for label, vals in rows:
        cells = "".join(
            f"{vals[name]:>9.3f}" if np.isfinite(vals.get(name, np.nan))
            else f"{'--':>9}" for name in METRIC_COLUMNS)
        lines.append(f"{label:<18}" + cells)
    return "\n".join(lines)


def evaluate(system, samples, seeds=(0,), split: str = "test",
             w: float = None, steps: int = None, cues: "torch.Tensor" = None,
             progress=None) -> MetricReport:
    """Sample one try-off output per (test item, seed) and aggregate metrics.

    FID/KID are computed on the frozen image encoder's pooled features of
    generated vs. ground-truth flats, per category and overall.
    """
    import torch

    if cues is None and system.config.cues_source == "gcbm":
        cues = system.compute_cues(samples, seed=system.config.seed)
    categories = sorted({s.spec.category for s in samples})
    outputs, targets, cats, psnrs, ssims = [], [], [], [], []
    for i, sample in enumerate(samples):
        for seed in seeds:
            out = system.try_off(sample, w=w, steps=steps,
                                 seed=int(seed) * 100003 + i,
                                 cues=None if cues is None else cues[i:i + 1])
            outputs.append(out)
            targets.append(sample.x_c)
            cats.append(sample.spec.category)
            psnrs.append(psnr(out, sample.x_c))
            ssims.append(ssim(out, sample.x_c))
            if progress is not None:
                progress(i, seed)

    with torch.no_grad():
        _, feats_out = system.image_tokens(outputs)
        _, feats_ref = system.image_tokens(targets)
    feats_out = feats_out.numpy()
    feats_ref = feats_ref.numpy()

    def block(indices) -> dict:
        vals = {
            "psnr_db": float(np.mean([psnrs[i] for i in indices])),
            "ssim": float(np.mean([ssims[i] for i in indices])),
        }
        if len(indices) >= 2:
            vals["fid"] = toy_fid(feats_out[indices], feats_ref[indices])
            vals["kid"] = toy_kid(feats_out[indices], feats_ref[indices])
        else:
            vals["fid"] = float("nan")
            vals["kid"] = float("nan")
        vals["count"] = len(indices)
        return vals

    all_idx = list(range(len(outputs)))
    per_category = {
        cat: block([i for i in all_idx if cats[i] == cat]) for cat in categories
    }
    return MetricReport(
        split=split,
        seeds=[int(s) for s in seeds],
        config_hash=system.config.content_hash(),
        sample_count=len(samples),
        overall=block(all_idx),
        per_category=per_category,
    )


def write_report(report: MetricReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "report.txt").write_text(report.to_table() + "\n")
