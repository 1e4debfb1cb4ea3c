"""Command-line entry point: ``evit-unet <command> ...``.

Exit codes: 0 success, 1 check failure, 2 usage or config error, 3 IO error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import checkpoint, complexity, pgm
from .config import EViTUNetConfig, RunConfig
from .core import container
from .errors import CorruptFile, EViTError
from .model import build

log = logging.getLogger("evit_unet")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

CHECKPOINT_NAME = "checkpoint.evtc"
SNAPSHOT_NAME = "config.resolved.cfg"


def _parse_hw(text):
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None


def _emit(text: str) -> None:
    sys.stdout.write(text)
    sys.stdout.flush()


# --------------------------------------------------------------------------- commands

def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    ok = run_selftest(corrupt_backward=args.corrupt_backward, seeds=args.seeds, out=_emit)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_gradcheck(args) -> int:
    from .checks import run_scope

    failed = 0
    total = 0
    for name, seed, report in run_scope(args.scope, seeds=range(args.seeds)):
        total += 1
        failed += not report.passed
        _emit(f"{args.scope}\t{name}\tseed={seed}\t{report.summary()}\n")
    _emit(f"{args.scope}: {total - failed}/{total} passed\n")
    return EXIT_OK if failed == 0 else EXIT_FAIL


def cmd_flops(args) -> int:
    # a run config is a superset of the model keys, so either kind of file works
    config = RunConfig.from_file(args.config).model if args.config else EViTUNetConfig()
    report = complexity.count_macs(config, args.input_hw, batch=args.batch)
    _emit(complexity.emit_report(report, args.format).decode("utf-8"))
    if args.plot:
        from .plots import plot_cost

        plot_cost(report, args.plot)
        log.info("wrote %s", args.plot)
    return EXIT_OK


def _datasets(run: RunConfig):
    from .training.synth import generate_synth_dataset, split_dataset

    cfg = run.model
    H, W = cfg.input_hw
    samples = generate_synth_dataset(run.dataset_size, H, W, cfg.num_classes, run.dataset_seed)
    return split_dataset(samples, run.dataset_seed)


def cmd_synth(args) -> int:
    from .training.synth import save_dataset

    run = RunConfig.from_file(args.config)
    train_set, held = _datasets(run)
    chosen = {"train": train_set, "eval": held, "all": train_set + held}[args.split]
    save_dataset(chosen, args.out)
    _emit(f"wrote {len(chosen)} samples ({args.split}) to {args.out}\n")
    return EXIT_OK


def cmd_train(args) -> int:
    from .plots import plot_history
    from .training.loop import train
    from .training.sgd import SGD

    run = RunConfig.from_file(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / SNAPSHOT_NAME).write_text(run.to_text(), encoding="utf-8")
    train_set, held = _datasets(run)
    model = build(run.model)
    sgd = SGD(model.parameters(), lr=run.lr, momentum=run.momentum, weight_decay=run.weight_decay)

    def report(rec):
        _emit(f"epoch {rec.epoch:3d}  loss {rec.train_loss:.4f}  eval mDSC {rec.eval.mean_dsc:.4f}"
              f"  mIoU {rec.eval.mean_iou:.4f}  ({rec.seconds:.1f}s)\n")

    history = train(model, train_set, held, sgd, run.epochs, run.batch_size, run.shuffle_seed,
                    run.ce_weight, run.dice_weight, on_epoch=report)
    checkpoint.save_checkpoint(model, out / CHECKPOINT_NAME)
    (out / "history.csv").write_text(history.to_csv(), encoding="utf-8")
    plot_history(history, out / "history.png")
    if args.export_eval:
        from .training.synth import save_dataset

        save_dataset(held, out / "eval_set")
    _emit(f"final eval mean DSC {history[-1].eval.mean_dsc:.4f}; outputs in {out}\n")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .training.loop import evaluate
    from .training.synth import load_dataset

    model = checkpoint.load_checkpoint(args.checkpoint)
    samples = load_dataset(args.dataset)
    report = evaluate(model, samples)
    _emit(report.to_text())
    Path(args.out).write_text(report.to_csv(), encoding="utf-8")
    log.info("wrote %s", args.out)
    return EXIT_OK


def cmd_predict(args) -> int:
    from .training.loop import predict_masks

    model = checkpoint.load_checkpoint(args.checkpoint)
    images = container.load(args.input)
    single = images.ndim == 3
    if single:
        images = images[None]
    if images.ndim != 4 or images.shape[1] != 3:
        raise CorruptFile(f"{args.input}: expected an image tensor [3,H,W] or [B,3,H,W], got {images.shape}")
    logits, masks = predict_masks(model, images)
    out = Path(args.out)
    container.save(out, logits[0] if single else logits)
    maxval = model.config.num_classes - 1
    stems = [out.with_suffix(".pgm")] if single else [out.with_name(f"{out.stem}_{i}.pgm") for i in range(len(masks))]
    for path, mask in zip(stems, masks):
        pgm.save_pgm(path, mask, maxval)
    if args.plot:
        from .plots import plot_prediction

        plot_prediction(images[0], masks[0], args.plot, model.config.num_classes)
    _emit(f"logits {tuple(logits.shape)} -> {out}; masks -> {', '.join(str(p) for p in stems)}\n")
    return EXIT_OK


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evit-unet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("selftest", help="run the invariant suite")
    p.add_argument("--corrupt-backward", action="store_true",
                   help="negative control: break one backward rule, expect failure")
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--scope", choices=("op", "block", "model"), required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("flops", help="analytic params and MACs per stage")
    p.add_argument("--config", help="model or run config file (defaults when omitted)")
    p.add_argument("--input-hw", type=_parse_hw, default=None, help="HxW, defaults to the config's")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--plot", help="also write a per-stage bar chart to this path")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("synth", help="export the synthetic dataset a run config describes")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "eval", "all"), default="eval")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on the synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--export-eval", action="store_true", help="also write the held-out split to OUT/eval_set")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics of a checkpoint on a dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default="metrics.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="logits and argmax mask for an EVT1 image tensor")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="logits path; masks go next to it as .pgm")
    p.add_argument("--plot", help="also write an image/prediction figure to this path")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (OSError, CorruptFile) as exc:
        print(f"evit-unet {args.command}: IO error: {exc}", file=sys.stderr)
        return EXIT_IO
    except EViTError as exc:
        print(f"evit-unet {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
