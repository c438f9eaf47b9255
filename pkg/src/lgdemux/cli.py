"""Command line front end: gen / train / eval / render.

    lgdemux gen   --n 1 --kind num --out data/num1 [--side 64 --p-max 3 ...]
    lgdemux train --stage calib --db data/exp1 --out models/calib.lgdx --loss hwl
    lgdemux train --stage classify --db data/num1 --out models/clf.lgdx
    lgdemux eval  --config experiment.json --out runs/exp1
    lgdemux render --calib models/calib.lgdx --db data/exp1 --out panels --count 4

Exit status is nonzero on training divergence or any failed invariant.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .aberration import AberrationConfig
from .dataset import DatasetConfig, build_dataset, load_dataset
from .nncore import TrainingDivergedError, load_model, save_model
from .pipeline import (
    ExperimentConfig,
    render_panel,
    run_from_echo,
    train_calibration,
    train_classifier,
)


def _fractions(text: str):
    parts = tuple(float(p) for p in text.split(","))
    return parts


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lgdemux", description=__doc__.strip().splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a dataset")
    gen.add_argument("--n", type=int, required=True, choices=(1, 2, 3), help="superposition order")
    gen.add_argument("--kind", required=True, choices=("num", "synthexp"))
    gen.add_argument("--out", required=True)
    gen.add_argument("--side", type=int, default=64)
    gen.add_argument("--p-max", type=int, default=3)
    gen.add_argument("--l-max", type=int, default=3)
    gen.add_argument("--aug", type=int, default=70, help="augmentation count per combination")
    gen.add_argument("--aug-mode", choices=("add", "total"), default="add")
    gen.add_argument("--noise-var", type=float, default=0.2)
    gen.add_argument("--fractions", type=_fractions, default=None, help="e.g. 0.85,0.15 or 0.72,0.18,0.10")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--aberration-json", default=None, help="JSON file with an AberrationConfig (synthexp)")

    tr = sub.add_parser("train", help="train one stage on an existing dataset")
    tr.add_argument("--stage", required=True, choices=("calib", "classify"))
    tr.add_argument("--db", required=True)
    tr.add_argument("--out", required=True, help="checkpoint path (.lgdx)")
    tr.add_argument("--loss", choices=("hwl", "mae", "mse"), default="hwl")
    tr.add_argument("--gamma", type=float, default=4.0)
    tr.add_argument("--epochs", type=int, default=None)
    tr.add_argument("--batch", type=int, default=None)
    tr.add_argument("--lr", type=float, default=1e-3)
    tr.add_argument("--seed", type=int, default=0)

    ev = sub.add_parser("eval", help="run a full experiment from a config JSON")
    ev.add_argument("--config", required=True)
    ev.add_argument("--out", default=None, help="directory for report + models")

    rd = sub.add_parser("render", help="render input/prediction/truth panels")
    rd.add_argument("--calib", required=True, help="calibration checkpoint")
    rd.add_argument("--db", required=True, help="synthexp dataset directory")
    rd.add_argument("--out", required=True)
    rd.add_argument("--count", type=int, default=4)
    rd.add_argument("--split", default="test")
    rd.add_argument("--random-inputs", type=int, default=0,
                    help="additionally render this many random-noise probes")
    return ap


def cmd_gen(args) -> int:
    kw = dict(
        n_modes=args.n, kind=args.kind, side=args.side, p_max=args.p_max, l_max=args.l_max,
        augment_count=args.aug, augment_mode=args.aug_mode, noise_variance=args.noise_var,
        seed=args.seed,
    )
    if args.fractions is not None:
        kw["fractions"] = args.fractions
    elif args.kind == "synthexp":
        kw["fractions"] = (0.72, 0.18, 0.10)
    if args.aberration_json:
        kw["aberration"] = AberrationConfig.from_dict(json.loads(Path(args.aberration_json).read_text()))
    manifest = build_dataset(DatasetConfig(**kw), args.out)
    counts = manifest["counts"]
    print(f"wrote {counts['samples']} samples ({counts['combinations']} combinations) to {args.out}")
    print(f"splits: {counts['splits']}")
    return 0


def cmd_train(args) -> int:
    db = load_dataset(args.db)
    cfg = ExperimentConfig(
        op="bpnet" if args.stage == "calib" else "classifier_standalone",
        clf_db=args.db, calib_db=args.db, seed=args.seed,
        calib_loss=args.loss, hwl_gamma=args.gamma,
        calib_lr=args.lr, clf_lr=args.lr,
    )
    if args.epochs is not None:
        cfg.calib_epochs = cfg.clf_epochs = args.epochs
    if args.batch is not None:
        cfg.calib_batch = cfg.clf_batch = args.batch

    def log(entry):
        msg = "  ".join(f"{k} {v:.5f}" if isinstance(v, float) else f"{k} {v}" for k, v in entry.items())
        print(msg, flush=True)

    if args.stage == "calib":
        net, history, tcfg, opt = train_calibration(db, cfg, log=log)
        role = "calibration"
    else:
        net, history, tcfg, opt = train_classifier(db, cfg, log=log)
        role = "classifier"
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_model(args.out, net, optimizer=opt, epoch=len(history), train_config=tcfg,
               extra={"role": role, "db": str(args.db), "loss": args.loss if args.stage == "calib" else "bce"})
    print(f"saved {role} checkpoint to {args.out} after {len(history)} epochs")
    return 0


def cmd_eval(args) -> int:
    echo = json.loads(Path(args.config).read_text())
    report = run_from_echo(echo, out_dir=args.out, log=lambda e: print(e, flush=True))
    if "exact_match_accuracy" in report:
        print(f"exact-match accuracy: {report['exact_match_accuracy']:.4f}")
        for k, v in sorted(report.get("extras", {}).items()):
            print(f"{k}: {v}")
    else:
        for name, entry in report.get("losses", {}).items():
            print(f"{name}: fg-mae {entry['foreground_mae']:.4f} "
                  f"dark-collapse {entry['dark_collapse_fraction']:.2f} "
                  f"flow-accuracy {entry['bpnet_exact_match']:.3f}")
    return 0


def cmd_render(args) -> int:
    net, _ = load_model(args.calib)
    db = load_dataset(args.db)
    mask = db.splits == args.split
    idx = np.flatnonzero(mask)[: args.count]
    samples = [
        {"input": db.inputs[i, 0], "target": db.targets[i, 0] if db.targets is not None else None}
        for i in idx
    ]
    files = render_panel(samples, net, args.out)
    if args.random_inputs > 0:
        rng = np.random.default_rng(0)
        side = db.inputs.shape[-1]
        probes = [{"input": rng.normal(0.0, 1.0, (side, side)).astype(np.float32)}
                  for _ in range(args.random_inputs)]
        files += render_panel(probes, net, args.out, stem="random_probes")
    for f in files:
        print(f)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gen":
            return cmd_gen(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "render":
            return cmd_render(args)
    except (TrainingDivergedError, AssertionError, fileio.SchemaVersionError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
