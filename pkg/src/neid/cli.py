"""Command-line entry point: ``neid {train,eval,enhance,synth,report}``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
import argparse
import glob
import json
import logging
import os
import sys

from . import data, imgcore, metrics, trainer
from .checkpoint import load_checkpoint
from .errors import NeidError
from .model import ArchConfig

log = logging.getLogger("neid")

VARIANT_FLAGS = {"unet": "unet_baseline", "le": "le_only", "le_dr": "le_dr", "full": "full"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def build_parser():
    parser = _Parser(prog="neid", description="Low-light enhancement with joint 2x detail refinement.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--data", required=True)
    p.add_argument("--layout", choices=("generic", "lol"), default="generic")
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=tuple(VARIANT_FLAGS))
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps-per-epoch", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patch-size", type=int)
    p.add_argument("--levels", type=int)
    p.add_argument("--base-channels", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--eval-mode", choices=("full_image", "patch"))
    p.add_argument("--eval-data", help="generic-layout directory for periodic evaluation")
    p.add_argument("--limit", type=int, help="use only the first N training pairs")
    p.add_argument("--clip-norm", type=float)
    p.add_argument("--resume", help="checkpoint directory to resume from")

    p = sub.add_parser("eval", help="score a checkpoint on a paired dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--layout", choices=("generic", "lol"), default="generic")
    p.add_argument("--split", choices=("train", "eval"), default="eval")
    p.add_argument("--mode", choices=("full_image", "patch"), default="full_image")
    p.add_argument("--patch-size", type=int, default=256)
    p.add_argument("--quantize", action="store_true", help="8-bit roundtrip predictions before scoring")
    p.add_argument("--out", help="report JSON path (default: stdout)")
    p.add_argument("--csv", help="also write per-image CSV")

    p = sub.add_parser("enhance", help="enhance a single PNG")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--no-downsample", action="store_true",
                   help="feed the image as-is; the output is twice its size")

    p = sub.add_parser("synth", help="write a synthetic paired dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=320)
    p.add_argument("--sigma", type=float, default=0.01)

    p = sub.add_parser("report", help="plot curves and tabulate results of runs")
    p.add_argument("--runs", nargs="+", required=True, help="run directories or report JSON files")
    p.add_argument("--out", default=".")
    return parser


def _train_config(args):
    cfg = trainer.TrainConfig.load_json(args.config) if args.config else trainer.TrainConfig()
    arch = cfg.arch
    arch_kw = {}
    if args.variant:
        arch_kw["variant"] = VARIANT_FLAGS[args.variant]
    if args.levels is not None:
        arch_kw["levels"] = args.levels
    if args.base_channels is not None:
        arch_kw["base_channels"] = args.base_channels
    if arch_kw:
        arch = ArchConfig(**{**arch.to_dict(), **arch_kw})
    overrides = {
        "seed": args.seed,
        "epochs": args.epochs,
        "steps_per_epoch": args.steps_per_epoch,
        "batch_size": args.batch_size,
        "patch_size": args.patch_size,
        "eval_every": args.eval_every,
        "eval_mode": args.eval_mode,
        "clip_norm": args.clip_norm,
    }
    d = cfg.to_dict()
    d.update({k: v for k, v in overrides.items() if v is not None})
    d["arch"] = arch.to_dict()
    return trainer.TrainConfig.from_dict(d)


def cmd_train(args):
    try:
        cfg = _train_config(args)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc
    samples = data.scan_paired_dataset(args.data, args.layout, "train")
    if args.limit:
        samples = samples[: args.limit]
    if args.eval_data:
        eval_samples = data.scan_paired_dataset(args.eval_data, "generic")
    elif args.layout == "lol":
        eval_samples = data.scan_paired_dataset(args.data, "lol", "eval")
    else:
        eval_samples = samples
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.json"), "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
    ckpt = trainer.train(cfg, samples, args.out, eval_samples=eval_samples, resume=args.resume)
    print(f"trained {args.out}: epoch {ckpt.epoch}, step {ckpt.global_step}, best eval PSNR {ckpt.best_psnr}")
    return 0


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    samples = data.scan_paired_dataset(args.data, args.layout, args.split)
    report = trainer.evaluate(ckpt, samples, mode=args.mode, patch_size=args.patch_size, quantize=args.quantize)
    if args.out:
        report.save_json(args.out)
    else:
        json.dump(report.to_dict(), sys.stdout, indent=2)
        sys.stdout.write("\n")
    if args.csv:
        report.save_csv(args.csv)
    return 0


def cmd_enhance(args):
    ckpt = load_checkpoint(args.checkpoint)
    model = trainer.model_from_checkpoint(ckpt)
    img = imgcore.load_png(args.input)
    out = trainer.enhance_image(model, img, downsample=not args.no_downsample)
    imgcore.save_png(out, args.output)
    return 0


def cmd_synth(args):
    data.make_synthetic_dataset(args.out, args.count, args.seed, size=args.size, sigma=args.sigma)
    return 0


def _load_run(path):
    """Return (name, loss records, eval records, final MetricsReport or None, variant)."""
    if os.path.isfile(path):
        report = metrics.MetricsReport.load_json(path)
        return os.path.splitext(os.path.basename(path))[0], [], [], report, None
    name = os.path.basename(os.path.normpath(path))
    loss_path = os.path.join(path, "logs", "loss.jsonl")
    losses = trainer.read_loss_log(loss_path) if os.path.exists(loss_path) else []
    eval_path = os.path.join(path, "logs", "eval.jsonl")
    evals = trainer.read_loss_log(eval_path) if os.path.exists(eval_path) else []
    reports = sorted(glob.glob(os.path.join(path, "reports", "*.json")))
    final = metrics.MetricsReport.load_json(reports[-1]) if reports else None
    variant = None
    cfg_path = os.path.join(path, "config.json")
    if os.path.exists(cfg_path):
        with open(cfg_path) as fh:
            variant = json.load(fh).get("arch", {}).get("variant")
    return name, losses, evals, final, variant


def _plot(series, xlabel, ylabel, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, xs, ys in series:
        ax.plot(xs, ys, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if series:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def cmd_report(args):
    os.makedirs(args.out, exist_ok=True)
    runs = [_load_run(p) for p in args.runs]
    _plot([(n, [r["step"] for r in ls], [r["total"] for r in ls]) for n, ls, _, _, _ in runs if ls],
          "step", "total loss", os.path.join(args.out, "loss_curve.svg"))
    _plot([(n, [r["epoch"] for r in ev], [float(r["mean_psnr"]) for r in ev]) for n, _, ev, _, _ in runs if ev],
          "epoch", "eval PSNR (dB)", os.path.join(args.out, "psnr_curve.svg"))
    _plot([(n, [r["epoch"] for r in ev], [r["mean_ssim"] for r in ev]) for n, _, ev, _, _ in runs if ev],
          "epoch", "eval SSIM", os.path.join(args.out, "ssim_curve.svg"))
    lines = ["| Run | Architecture | PSNR | SSIM |", "|---|---|---|---|"]
    for name, _, _, final, variant in runs:
        if final is None:
            lines.append(f"| {name} | {variant or '-'} | - | - |")
        else:
            lines.append(f"| {name} | {variant or '-'} | {final.mean_psnr:.2f} | {final.mean_ssim:.4f} |")
    with open(os.path.join(args.out, "table.md"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "enhance": cmd_enhance, "synth": cmd_synth, "report": cmd_report}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        trainer.set_threads_from_env()
        return COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(str(exc) + "\n")
        return 1
    except (NeidError, OSError) as exc:
        sys.stderr.write(f"neid: error: {type(exc).__name__}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
