"""Command-line entry points.

    tryoff gen-data --n 256 --size 64 --seed 0 --out data/
    tryoff train --stage 1 --data data/ --out runs/s1
    tryoff train --stage 2 --data data/ --stage1-ckpt runs/s1/stage1.pt --out runs/s2
    tryoff sample --ckpt runs/s2/stage2.pt --data data/ --index 0 --seed 0 \
                  --w 3.0 --steps 50 --out out/
    tryoff eval --ckpt runs/s2/stage2.pt --data data/ --split test --seeds 0 --out out/
    tryoff ablate --kind fscm_pos --data data/ --stage1-ckpt runs/s1/stage1.pt --out out/
"""

from __future__ import annotations

import argparse
import math
from pathlib import Path

import numpy as np

from .ablation import SWEEP_DOMAINS, SweepSpec, run_sweep
from .config import ExperimentConfig
from .dataset import generate_dataset, load_manifest, load_sample, load_split, save_image
from .metrics import evaluate, write_report
from .pipeline import TryOffSystem, load_checkpoint, save_checkpoint, train_stage1, train_stage2


def _load_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        return ExperimentConfig.load(args.config)
    return ExperimentConfig()


def cmd_gen_data(args):
    manifest = generate_dataset(args.n, (args.size, args.size), args.seed, args.out)
    print(f"wrote {manifest.count} samples "
          f"({len(manifest.splits['train'])} train / "
          f"{len(manifest.splits['test'])} test) to {args.out}")


def cmd_train(args):
    cfg = _load_config(args)
    samples = load_split(args.data, "train")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.stage == 1:
        system = TryOffSystem(cfg)
        history = train_stage1(system, samples, steps=args.steps, lr=args.lr,
                               out_path=out / "stage1.pt")
        print(f"stage 1: {len(history)} steps, "
              f"loss {history[0]:.4f} -> {history[-1]:.4f}")
    else:
        if not args.stage1_ckpt:
            raise SystemExit("--stage1-ckpt is required for stage 2")
        system, _ = load_checkpoint(args.stage1_ckpt)
        system.config = cfg
        history, _ = train_stage2(system, samples, steps=args.steps,
                                  lr=args.lr, out_dir=out)
        print(f"stage 2: {len(history)} steps, "
              f"loss {history[0]:.4f} -> {history[-1]:.4f}")


def cmd_sample(args):
    system, _ = load_checkpoint(args.ckpt)
    sample = load_sample(args.data, _sample_id(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = system.try_off(sample, w=args.w, steps=args.steps, seed=args.seed,
                            dump_attention=args.dump_attention)
    if args.dump_attention:
        image, weights = result
        if weights is not None:
            from .attention import aggregate_attention_map
            np.save(out / f"attn_{args.dump_attention}.npy",
                    weights.detach().numpy())
            amap = aggregate_attention_map(weights[0]).detach().numpy()
            save_image(out / f"attn_{args.dump_attention}.png",
                       np.repeat(amap[:, :, None], 3, axis=2))
        else:
            print(f"no condition-branch attention at {args.dump_attention} "
                  "(feature injection disabled?)")
    else:
        image = result
    save_image(out / f"tryoff_seed{args.seed}.png", image)
    print(f"wrote {out}/tryoff_seed{args.seed}.png")


def _sample_id(args):
    manifest = load_manifest(args.data)
    ids = manifest.splits[args.split]
    return ids[args.index % len(ids)]


def cmd_eval(args):
    system, _ = load_checkpoint(args.ckpt)
    samples = load_split(args.data, args.split)
    seeds = [int(s) for s in args.seeds.split(",")]
    report = evaluate(system, samples, seeds=seeds, split=args.split,
                      w=args.w, steps=args.steps)
    write_report(report, args.out)
    print(report.to_table())


def cmd_ablate(args):
    cfg = _load_config(args)
    domain = SWEEP_DOMAINS[args.kind]
    if args.values:
        values = [_parse_sweep_value(v, domain) for v in args.values.split(",")]
    else:
        values = list(domain)
    spec = SweepSpec(kind=args.kind, values=values, base_config=cfg,
                     seeds=tuple(int(s) for s in args.seeds.split(",")))
    dataset = (load_split(args.data, "train"), load_split(args.data, "test"))
    rows = run_sweep(spec, args.stage1_ckpt, dataset, args.out,
                     train_steps=args.train_steps, train_lr=args.train_lr,
                     eval_samples=args.eval_samples, eval_steps=args.eval_steps)
    print((Path(args.out) / f"table_{args.kind}.txt").read_text())
    return rows


def _parse_sweep_value(text: str, domain):
    if text in domain:
        return text
    if text.lower() in ("inf", "infinity"):
        return math.inf
    try:
        v = float(text)
    except ValueError:
        return text
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tryoff",
                                     description="desk-scale virtual try-off lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic paired dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train stage 1 (cue prior) or stage 2")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stage1-ckpt")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="run try-off on one dataset sample")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--w", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--dump-attention", choices=("down0", "down1", "down2", "mid",
                                                "up1", "up2", "up3"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--seeds", default="0")
    p.add_argument("--w", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run one ablation sweep")
    p.add_argument("--kind", choices=sorted(SWEEP_DOMAINS), required=True)
    p.add_argument("--values", help="comma-separated subset of the kind's domain")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--stage1-ckpt", required=True)
    p.add_argument("--seeds", default="0")
    p.add_argument("--train-steps", type=int)
    p.add_argument("--train-lr", type=float)
    p.add_argument("--eval-samples", type=int)
    p.add_argument("--eval-steps", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    main()
