"""Command-line entry point: imptrain --manifest <file> [options]."""

from __future__ import annotations

import argparse
import sys

from imptrain.errors import TrainerError
from imptrain.train import TrainerRunConfig, run_finetune


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imptrain",
        description="Fine-tune low-rank adapters over an instruction dataset "
        "described by a training manifest.",
    )
    parser.add_argument("--manifest", required=True, help="path to manifest.txt")
    parser.add_argument(
        "--base",
        default="toy",
        help="base model family to instantiate (default: toy)",
    )
    parser.add_argument("--epochs", type=int, default=20)
    parser.add_argument("--max-seq-len", type=int, default=256)
    parser.add_argument("--adapter-out", default="adapter.pt")
    parser.add_argument("--loss-log", default="loss.tsv")
    parser.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = TrainerRunConfig(
        manifest_path=args.manifest,
        base_model=args.base,
        epochs=args.epochs,
        max_seq_len=args.max_seq_len,
        adapter_path=args.adapter_out,
        loss_log_path=args.loss_log,
        seed=args.seed,
    )
    try:
        result = run_finetune(config)
    except TrainerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(
        f"adapted {len(result.adapted_modules)} modules "
        f"({result.adapter_param_count} adapter parameters)"
    )
    print(f"steps: {len(result.losses)}")
    print(f"loss: {result.losses[0]:.4f} -> {result.losses[-1]:.4f}")
    print(f"adapter weights: {result.adapter_path}")
    print(f"loss log: {result.loss_log_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
