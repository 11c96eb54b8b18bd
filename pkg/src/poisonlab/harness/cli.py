"""Command-line entry point: ``poisonlab <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from ..codec import Codec
from .archive import load_slot
from .config import FIXED_SWEEP, ExperimentConfig
from .runner import EvalReport, evaluate, pretrain_codec, sweep_fixed, train
from .stats import sliding_window_max, wilcoxon_signed_rank


def _base_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "discount", None):
        cfg = cfg.with_discount(args.discount)
    kw = {}
    if getattr(args, "seed", None) is not None:
        kw["seed"] = args.seed
    if getattr(args, "episodes", None) is not None:
        kw["episodes"] = args.episodes
    if getattr(args, "out", None):
        kw["out_dir"] = args.out
    if getattr(args, "codec", None):
        kw["codec_dir"] = args.codec
    return cfg.replace(**kw) if kw else cfg


def cmd_pretrain_codec(args):
    cfg = _base_config(args)
    out = Path(args.out or "codec")
    codec = pretrain_codec(cfg, out)
    print(f"codec saved to {out} (latent {codec.encoder.dims[-1]}, grid {codec.grid_m})")


def cmd_train(args):
    cfg = _base_config(args)
    archive, metrics_path = train(cfg)
    print(f"metrics: {metrics_path}")
    print(f"best mean @Acc: {archive.best[('acc', 'mean')]:.4f}")


def cmd_sweep_fixed(args):
    cfg = _base_config(args)
    gammas = [float(g) for g in args.gammas.split(",")] if args.gammas else list(FIXED_SWEEP)
    results = sweep_fixed(cfg, gammas)
    for g, archive in results.items():
        print(f"gamma {g:.2f}: best mean @Acc {archive.best[('acc', 'mean')]:.4f}")


def cmd_evaluate(args):
    run = Path(args.run)
    cfg = ExperimentConfig.load(run / "config.json")
    codec_dir = Path(cfg.codec_dir) if cfg.codec_dir else run / "codec"
    codec = Codec.load(codec_dir, cfg.grid)
    actor = load_slot(run / "archive", args.criterion, args.aggregation)
    report = evaluate(cfg, actor, codec)
    out = Path(args.out) if args.out else run / "eval.json"
    out.write_text(report.to_json() + "\n")
    for group, s in report.summary.items():
        print(f"{group}-seed victims: test @Acc {s['test_acc']:.4f}, max @Effort {s['max_effort']:.4f}")
    print(f"report: {out}")


def _episode_means(metrics_csv, column: str):
    per_ep = defaultdict(list)
    with open(metrics_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            if int(row["attack_step"]) >= 1:
                per_ep[int(row["episode"])].append(float(row[column]))
    eps = sorted(per_ep)
    return eps, [float(np.mean(per_ep[e])) for e in eps]


def cmd_analyze(args):
    if args.a and args.b:
        a = EvalReport.load(args.a).mean_acc(args.group)
        b = EvalReport.load(args.b).mean_acc(args.group)
        w, p = wilcoxon_signed_rank(a, b, args.alternative)
        print(json.dumps({"statistic": w, "p_value": p, "n": len(a),
                          "alternative": args.alternative}))
    if args.metrics:
        eps, means = _episode_means(args.metrics, args.column)
        smoothed = sliding_window_max(means, args.window)
        out = Path(args.out or Path(args.metrics).with_name(f"{args.column}_window{args.window}.csv"))
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", f"mean_{args.column}", f"window_max_{args.column}"])
            for e, m, s in zip(eps, means, smoothed):
                w.writerow([e, repr(m), repr(float(s))])
        print(f"sliding-window export: {out}")
    if not ((args.a and args.b) or args.metrics):
        raise SystemExit("analyze needs --a and --b, or --metrics")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poisonlab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, discount=True):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--episodes", type=int)
        p.add_argument("--codec", help="pretrained codec directory")
        if discount:
            p.add_argument("--discount", help="wd | klr | targetwd | targetklr | fixed:<gamma>")

    p = sub.add_parser("pretrain-codec", help="pretrain the trace auto-encoder")
    common(p, discount=False)
    p.set_defaults(func=cmd_pretrain_codec)

    p = sub.add_parser("train", help="train one attacker")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep-fixed", help="train once per fixed discount")
    common(p, discount=False)
    p.add_argument("--gammas", help="comma-separated discounts (default 0.80,...,0.99)")
    p.set_defaults(func=cmd_sweep_fixed)

    p = sub.add_parser("evaluate", help="20-attack test of an archived strategy")
    p.add_argument("--run", required=True, help="training output directory")
    p.add_argument("--criterion", default="acc")
    p.add_argument("--aggregation", default="mean", choices=("last", "mean", "cumulative"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="Wilcoxon test and sliding-window exports")
    p.add_argument("--a", help="evaluation report of the first model")
    p.add_argument("--b", help="evaluation report of the second model")
    p.add_argument("--alternative", default="greater", choices=("greater", "less"))
    p.add_argument("--group", choices=("same", "different"))
    p.add_argument("--metrics", help="metrics.csv to smooth")
    p.add_argument("--column", default="acc")
    p.add_argument("--window", type=int, default=75)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    args.func(args)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
