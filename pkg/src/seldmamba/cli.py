"""Command-line surface: train, evaluate, bench, describe."""

from __future__ import annotations

import argparse
import sys

from .checkpoint import load_container
from .config import load_config
from .model import count_params_macs
from .training import (bench_scan, describe_config, evaluate_checkpoint,
                       restore_model, train)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="seldmamba",
        description="Train, evaluate, and inspect the three-branch SELD "
                    "network with state-space decoders.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run unified or two-stage training")
    p_train.add_argument("--config", required=True, help="key=value config file")
    p_train.add_argument("--stage-plan", choices=("unified", "two-stage"),
                         help="override the configured stage plan")
    p_train.add_argument("--resume", help="checkpoint to continue from")

    p_eval = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--data", required=True, help="dataset manifest path")
    p_eval.add_argument("--threshold", type=float, default=0.5,
                        help="activity decision threshold")

    p_bench = sub.add_parser("bench", help="time the selective scan across lengths")
    p_bench.add_argument("--lengths", default="1024,2048,4096,8192")
    p_bench.add_argument("--channels", type=int, default=16)
    p_bench.add_argument("--state-dim", type=int, default=16)
    p_bench.add_argument("--repeats", type=int, default=5)
    p_bench.add_argument("--chunk", type=int, default=0,
                         help="chunked-scan block size (0 = stepwise reference)")

    p_desc = sub.add_parser("describe", help="parameter/MAC accounting and manifest")
    group = p_desc.add_mutually_exclusive_group(required=True)
    group.add_argument("--ckpt")
    group.add_argument("--config")
    p_desc.add_argument("--seconds", type=float, default=1.0,
                        help="audio length for the MAC count")
    return parser


def _cmd_train(args):
    cfg = load_config(path=args.config)
    if args.stage_plan:
        cfg.stage.plan = args.stage_plan
    result = train(cfg, resume_from=args.resume)
    report = result["report"]
    print(report.format_text())
    print(f"checkpoint: {result['checkpoint']}")
    return 0


def _cmd_evaluate(args):
    report = evaluate_checkpoint(args.ckpt, args.data, threshold=args.threshold)
    print(report.format_text())
    return 0


def _cmd_bench(args):
    lengths = tuple(int(v) for v in args.lengths.split(","))
    result = bench_scan(lengths=lengths, channels=args.channels,
                        state_dim=args.state_dim, repeats=args.repeats,
                        chunk=args.chunk or None)
    print(f"{'L':>8}  {'median (ms)':>12}  {'min (ms)':>10}")
    for row in result["rows"]:
        print(f"{row['length']:>8}  {row['median_s'] * 1e3:>12.3f}  "
              f"{row['min_s'] * 1e3:>10.3f}")
    print(f"growth exponent: {result['exponent']:.3f}")
    return 0


def _cmd_describe(args):
    if args.config:
        cfg = load_config(path=args.config)
        text, _, _ = describe_config(cfg, seconds=args.seconds)
        print(text)
        return 0
    arrays, meta = load_container(args.ckpt)
    model_arrays = {k: v for k, v in arrays.items() if not k.startswith("optim.")}
    n_scalars = sum(v.size for v in model_arrays.values())
    print(f"checkpoint: {args.ckpt}")
    print(f"epoch: {meta.get('epoch', '?')}")
    print(f"stored scalars: {n_scalars:,} ({n_scalars / 1e6:.2f} M)")
    try:
        _, cfg, _, _ = restore_model(args.ckpt)
        params, macs = count_params_macs(cfg.model, seconds=args.seconds)
        print(f"learnable params: {params:,} ({params / 1e6:.2f} M)")
        print(f"MACs: {macs:,} per {args.seconds:g} s ({macs / 1e9:.2f} G)")
    except ValueError:
        pass
    print("arrays:")
    for name, arr in model_arrays.items():
        print(f"  {name}  {tuple(arr.shape)}")
    return 0


def main(argv=None):
    args = _build_parser().parse_args(argv)
    handlers = {"train": _cmd_train, "evaluate": _cmd_evaluate,
                "bench": _cmd_bench, "describe": _cmd_describe}
    try:
        return handlers[args.command](args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
