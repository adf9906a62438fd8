"""Harness entry point: convert checkpoints, run adaptation, fine-tune."""

from __future__ import annotations

import argparse
import sys

from adaptharness import HarnessError
from adaptharness.model import convert_checkpoint, export_checkpoint
from adaptharness.training import AdaptRun, finetune_eval, run_adaptation


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="adapt-harness",
        description="Run masked-LM adaptation and fine-tuning smoke tests on "
        "prepared artifacts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="round-trip a checkpoint through the model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--output", required=True)

    p = sub.add_parser("adapt", help="train MLM per an adaptation manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=("maft", "laft", "none"), default="maft")
    p.add_argument("--metrics-out", dest="metrics_out", required=True)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("finetune", help="fine-tune on labeled data and report F1")
    p.add_argument("--task", choices=("ner", "topic", "sentiment"), required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--eval", dest="eval_path", required=True)
    p.add_argument("--metrics-out", dest="metrics_out", required=True)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    try:
        if args.command == "convert":
            model, metadata = convert_checkpoint(args.checkpoint)
            export_checkpoint(model, metadata, args.output)
            print(f"converted {args.checkpoint} -> {args.output}")
        elif args.command == "adapt":
            run = AdaptRun(args.manifest, args.mode, args.metrics_out)
            doc = run_adaptation(run, args.max_steps, args.batch_size, args.seed)
            print(
                f"steps={doc['steps']} initial_loss={doc['initial_loss']:.4f} "
                f"final_loss={doc['final_loss']:.4f} metrics={args.metrics_out}"
            )
        else:
            doc = finetune_eval(
                args.task,
                args.checkpoint,
                args.tokenizer,
                args.train,
                args.eval_path,
                args.metrics_out,
                max_steps=args.max_steps,
                seed=args.seed,
            )
            print(f"task={args.task} f1={doc['task_metrics']['f1']:.4f} metrics={args.metrics_out}")
        return 0
    except HarnessError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: io: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
