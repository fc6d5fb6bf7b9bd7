"""Scripted ablation sweeps.

Each sweep kind owns a fixed set of config keys; a variant config differs
from the base only in those keys (asserted), every variant shares the same
stage-1 checkpoint and dataset, trained stage-2 checkpoints are cached by
training-config hash (so inference-only sweeps such as the guidance-strength
sweep train once), and each sweep emits one table row per value in the
familiar layout plus a small contact sheet of qualitative samples.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import FSCM_POSITIONS, ExperimentConfig
from .dataset import save_image
from .metrics import METRIC_COLUMNS, MetricReport, evaluate, format_metric_table
from .pipeline import TryOffSystem, load_system_with_config, save_checkpoint, train_stage2

INF = math.inf

SWEEP_DOMAINS = {
    "fscm_pos": list(FSCM_POSITIONS),
    "dream_p": [0.0, 0.5, 1.0, 1.5, 2.0, INF],
    "cfg_w": [1.0, 2.0, 3.0, 4.0, 5.0],
    "gcbm": ["on", "off"],
    "fscm_variant": ["full", "M1", "M2", "M3"],
    "focus_loss": ["off", "on"],
    "text": ["on", "off"],
}

# config keys each sweep kind is allowed to touch
OWNED_KEYS = {
    "fscm_pos": {"fscm_position"},
    "dream_p": {"dream_p"},
    "cfg_w": {"cfg_w"},
    "gcbm": {"cues_source", "use_class_embedding"},
    "fscm_variant": {"fscm_variant"},
    "focus_loss": {"focus_loss_weight", "premask_injected"},
    "text": {"use_text"},
}

# table row labels in the ordering the reference tables use (defaults last,
# marked as ours)
ROW_LABELS = {
    "fscm_pos": {"down0": "Down 0 (Ours)", "down1": "Down 1", "down2": "Down 2",
                 "mid": "Mid", "up1": "Up 1", "up2": "Up 2", "up3": "Up 3",
                 "all": "All"},
    "dream_p": {0.0: "0.0", 0.5: "0.5", 1.0: "1.0 (Ours)", 1.5: "1.5",
                2.0: "2.0", INF: "inf"},
    "cfg_w": {1.0: "w=1.0", 2.0: "w=2.0", 3.0: "w=3.0 (Ours)", 4.0: "w=4.0",
              5.0: "w=5.0"},
    "gcbm": {"on": "w/ GCBM (Ours)", "off": "w/o GCBM"},
    "fscm_variant": {"full": "w/ FSCM (Ours)", "M1": "M1 (w/o T_c)",
                     "M2": "M2 (w/o F_c')", "M3": "M3 (w/o FSCM)"},
    "focus_loss": {"off": "w/o Loss (Ours)", "on": "w/ Loss"},
    "text": {"on": "w/ Text (Ours)", "off": "w/o Text"},
}

ROW_ORDER = {
    "fscm_pos": ["down1", "down2", "mid", "up1", "up2", "up3", "all", "down0"],
    "dream_p": [0.0, 0.5, 1.0, 1.5, 2.0, INF],
    "cfg_w": [1.0, 2.0, 3.0, 4.0, 5.0],
    "gcbm": ["off", "on"],
    "fscm_variant": ["M1", "M2", "M3", "full"],
    "focus_loss": ["on", "off"],
    "text": ["off", "on"],
}


@dataclass
class SweepSpec:
    kind: str
    values: list
    base_config: ExperimentConfig
    seeds: tuple = (0,)

    def __post_init__(self):
        if self.kind not in SWEEP_DOMAINS:
            raise ValueError(f"unknown sweep kind {self.kind!r}")
        legal = SWEEP_DOMAINS[self.kind]
        for v in self.values:
            if v not in legal:
                raise ValueError(f"value {v!r} not in the {self.kind} domain {legal}")


def make_variant(base: ExperimentConfig, kind: str, value) -> ExperimentConfig:
    """Derived config differing from base only in the keys the kind owns."""
    if kind not in SWEEP_DOMAINS:
        raise ValueError(f"unknown sweep kind {kind!r}")
    if value not in SWEEP_DOMAINS[kind]:
        raise ValueError(f"illegal {kind} value {value!r}")
    if kind == "fscm_pos":
        variant = base.replace(fscm_position=value)
    elif kind == "dream_p":
        variant = base.replace(dream_p=value)
    elif kind == "cfg_w":
        variant = base.replace(cfg_w=value)
    elif kind == "gcbm":
        variant = (base.replace(cues_source="none", use_class_embedding=False)
                   if value == "off" else
                   base.replace(cues_source="gcbm", use_class_embedding=True))
    elif kind == "fscm_variant":
        variant = base.replace(fscm_variant=value)
    elif kind == "focus_loss":
        variant = (base.replace(focus_loss_weight=1.0, premask_injected=False)
                   if value == "on" else
                   base.replace(focus_loss_weight=0.0, premask_injected=True))
    else:  # text
        variant = base.replace(use_text=(value == "on"))
    _assert_isolation(base, variant, OWNED_KEYS[kind])
    return variant


def _assert_isolation(base: ExperimentConfig, variant: ExperimentConfig,
                      owned: set) -> None:
    for f in dataclasses.fields(base):
        if getattr(base, f.name) != getattr(variant, f.name):
            if f.name not in owned:
                raise AssertionError(
                    f"variant touched un-owned config key {f.name!r}")


@dataclass
class SweepRow:
    value: object
    label: str
    metrics: dict
    checkpoint: str


def run_sweep(spec: SweepSpec, stage1_ckpt, dataset, out_dir,
              train_steps: int = None, train_lr: float = None,
              eval_samples: int = None, eval_steps: int = None,
              contact_sheet: bool = True, progress=None) -> list:
    """Train (or reuse) one stage-2 variant per value, evaluate, and emit the
    table plus per-variant sample grids.

    dataset: (train_samples, test_samples) lists.  Checkpoints are cached in
    out_dir/checkpoints keyed by the variant's training hash; metrics are
    cached next to them keyed by the full config hash and seeds.
    """
    train_samples, test_samples = dataset
    out = Path(out_dir)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    if eval_samples is not None:
        test_samples = test_samples[:eval_samples]

    order = [v for v in ROW_ORDER[spec.kind] if v in spec.values]
    rows = []
    for value in order:
        cfg = make_variant(spec.base_config, spec.kind, value)
        ckpt_path = ckpt_dir / f"stage2_{cfg.training_hash()}.pt"
        if not ckpt_path.exists():
            system = load_system_with_config(stage1_ckpt, cfg)
            train_stage2(system, train_samples, steps=train_steps, lr=train_lr)
            save_checkpoint(ckpt_path, system, stage=2)
        else:
            system = load_system_with_config(ckpt_path, cfg)

        metrics_path = ckpt_dir / (
            f"metrics_{cfg.content_hash()}_" +
            "-".join(str(int(s)) for s in spec.seeds) + ".json")
        if metrics_path.exists():
            metrics = json.loads(metrics_path.read_text())
        else:
            report = evaluate(system, test_samples, seeds=spec.seeds,
                              steps=eval_steps)
            metrics = report.overall
            metrics_path.write_text(json.dumps(metrics, sort_keys=True))
            if contact_sheet:
                _contact_sheet(system, test_samples[:4],
                               out / f"samples_{_slug(value)}.png",
                               steps=eval_steps)
        label = ROW_LABELS[spec.kind][value]
        rows.append(SweepRow(value, label, metrics, str(ckpt_path)))
        if progress is not None:
            progress(value, metrics)

    table = format_metric_table([(r.label, r.metrics) for r in rows])
    title = f"Ablation: {spec.kind}"
    (out / f"table_{spec.kind}.txt").write_text(title + "\n" + table + "\n")
    return rows


def _slug(value) -> str:
    s = str(value).replace(".", "p")
    return s


def _contact_sheet(system: TryOffSystem, samples, path, steps=None) -> None:
    """Rows of [person view | try-off output | ground-truth flat]."""
    if not samples:
        return
    rows = []
    for i, sample in enumerate(samples):
        out = system.try_off(sample, steps=steps, seed=i)
        rows.append(np.concatenate([sample.x_m, out, sample.x_c], axis=1))
    save_image(path, np.concatenate(rows, axis=0))
