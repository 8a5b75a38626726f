"""Command-line entry points: corpus generation, training, benchmarks,
reports, and the annotation service."""
from __future__ import annotations

import argparse
import json
import os
from pathlib import Path

from .embedding import FeatureEncoder
from .evaluation import (
    auc, curve_from_records, load_corpus, make_corpus, read_records_csv, report,
    save_corpus, write_records_csv,
)
from .heads import (
    HeadConfig, HeadParams, LossSchedule, load_checkpoint, save_checkpoint,
    save_loss_trace,
)
from .matching import MatchConfig
from .memory import ForgettingConfig
from .robot import RobotConfig, run_benchmark
from .session import DECISION_DISTANCE, DECISION_HEADS, Pipeline, SessionConfig
from .training import train_stage1, train_stage2


def _add_corpus(sub):
    p = sub.add_parser("corpus", help="generate a synthetic video corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--videos", type=int, default=8)
    p.add_argument("--frames", type=int, default=24)
    p.add_argument("--size", default="64x64", help="HxW")
    p.add_argument("--objects", type=int, default=2)
    p.add_argument("--out", required=True)


def _add_train(sub):
    p = sub.add_parser("train", help="train both heads on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stage1-steps", type=int, default=400)
    p.add_argument("--stage2-steps", type=int, default=240)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--gain", type=float, default=8.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--kernel", type=int, default=3)


def _add_bench(sub):
    p = sub.add_parser("bench", help="run the robot benchmark over a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rounds", type=int, default=8)
    p.add_argument("--mode", choices=[DECISION_DISTANCE, DECISION_HEADS],
                   default=DECISION_DISTANCE)
    p.add_argument("--checkpoints", help="directory with propagation.ckpt/interaction.ckpt")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--gain", type=float, default=None,
                   help="embedding gain; defaults to 8.0 for heads mode, 2.5 for distance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window", type=int, default=12)
    p.add_argument("--local-downsample", type=int, default=2)
    p.add_argument("--retained-rounds", type=int, default=2)
    p.add_argument("--no-global-memory", action="store_true",
                   help="ablation: stop aggregating the global memory after round 1")
    p.add_argument("--label", default="run")


def _add_eval(sub):
    p = sub.add_parser("eval", help="summarize benchmark records into curves and plots")
    p.add_argument("--records", action="append", required=True,
                   help="records CSV; repeat for multiple labeled runs")
    p.add_argument("--out", required=True)


def _add_serve(sub):
    p = sub.add_parser("serve", help="run the annotation service")
    p.add_argument("--root", default=None, help="storage root (or IVOS_ROOT)")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--host", default="127.0.0.1")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="ivos")
    sub = parser.add_subparsers(dest="command", required=True)
    for add in (_add_corpus, _add_train, _add_bench, _add_eval, _add_serve):
        add(sub)
    args = parser.parse_args(argv)

    if args.command == "corpus":
        height, width = (int(v) for v in args.size.lower().split("x"))
        corpus = make_corpus(args.seed, args.videos, args.frames, height, width,
                             args.objects)
        save_corpus(corpus, args.out)
        print(f"wrote {args.videos} videos to {args.out}")
        return 0

    if args.command == "train":
        corpus = load_corpus(args.corpus)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        provider = FeatureEncoder(dim=args.dim, stride=4, seed=args.seed, gain=args.gain)
        head_cfg = HeadConfig(args.layers, args.channels, args.kernel, True)
        in_channels = args.dim + 3
        schedule = LossSchedule(1.0, 0.15, max(1, args.stage1_steps))

        prop = HeadParams(head_cfg, in_channels, seed=args.seed)
        prop, trace1 = train_stage1(prop, corpus, args.stage1_steps, provider,
                                    schedule=schedule, lr=args.lr, seed=args.seed)
        print(f"stage 1 done ({len(trace1)} steps)")
        save_checkpoint(prop, out / "propagation.ckpt")
        save_loss_trace(trace1, out / "stage1_loss.csv")

        inter = HeadParams(head_cfg, in_channels, seed=args.seed + 1)
        schedule2 = LossSchedule(1.0, 0.15, max(1, args.stage2_steps))
        inter, trace2 = train_stage2(inter, corpus, args.stage2_steps, provider,
                                     schedule=schedule2, lr=args.lr,
                                     seed=args.seed)
        save_checkpoint(inter, out / "interaction.ckpt")
        save_loss_trace(trace2, out / "stage2_loss.csv")
        print(f"checkpoints and loss traces in {out}")
        return 0

    if args.command == "bench":
        corpus = load_corpus(args.corpus)
        gain = args.gain if args.gain is not None else (
            8.0 if args.mode == DECISION_HEADS else 2.5)
        provider = FeatureEncoder(dim=args.dim, stride=4, seed=args.seed, gain=gain)
        prop = inter = None
        if args.mode == DECISION_HEADS:
            ckpt = Path(args.checkpoints or args.out)
            prop = load_checkpoint(ckpt / "propagation.ckpt")
            inter = load_checkpoint(ckpt / "interaction.ckpt")
        config = SessionConfig(
            match=MatchConfig(args.window, args.local_downsample),
            forget=ForgettingConfig(args.retained_rounds),
            decision=args.mode,
            aggregate_global=not args.no_global_memory,
        )
        pipeline = Pipeline(provider, config, prop, inter)
        result = run_benchmark(pipeline, corpus, args.rounds,
                               RobotConfig(seed=args.seed))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"records_{args.label}.csv"
        write_records_csv(result.records, csv_path)
        curve = curve_from_records(result.records)
        summary = {
            "label": args.label,
            "rounds": args.rounds,
            "videos": len(corpus),
            "auc": auc(curve) if len(curve.points) > 1 else None,
            "mean_j_by_round": {int(b): j for b, j in curve.points},
        }
        (out / f"summary_{args.label}.json").write_text(json.dumps(summary, indent=2))
        print(f"records: {csv_path}")
        for b, j in curve.points:
            print(f"  round {int(b)}: mean J = {j:.4f}")
        return 0

    if args.command == "eval":
        runs = {}
        for path in args.records:
            runs[Path(path).stem.replace("records_", "")] = read_records_csv(path)
        outputs = report(runs, args.out)
        for label, path in outputs.items():
            print(f"{label}: {path}")
        return 0

    if args.command == "serve":
        from .service import serve

        root = args.root or os.environ.get("IVOS_ROOT")
        if not root:
            parser.error("provide --root or set IVOS_ROOT")
        serve(root, port=args.port, host=args.host)
        return 0

    raise AssertionError("unreachable")


if __name__ == "__main__":
    raise SystemExit(main())
