"""Command-line entry point: ``lensmae <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, parse_ratio_list

log = logging.getLogger("lensmae")

COMMANDS = ("synth", "pretrain", "finetune-cls", "finetune-sr", "eval", "ablate", "export-features", "plot")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _ratios(raw: str):
    try:
        return parse_ratio_list(raw)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration (see README for keys)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--dataset-root", help="data root (Dataset1/ and Dataset2/ are resolved inside it)")
    common.add_argument("--epochs", type=int)
    common.add_argument("--threads", type=int, default=1,
                        help="BLAS/OpenMP threads; 1 gives bit-reproducible runs (default 1)")
    common.add_argument("--log-level", default="INFO")

    parser = _Parser(prog="lensmae", description="MAE pretraining and fine-tuning for lensing images")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic Dataset1/Dataset2 tree")
    p.add_argument("--per-class", type=int)
    p.add_argument("--pairs", type=int)

    p = sub.add_parser("pretrain", parents=[common], help="MAE pretraining on no_sub images")
    p.add_argument("--mask-ratio", type=float)

    for name, help_text in (("finetune-cls", "fine-tune a 3-class classifier"),
                            ("finetune-sr", "fine-tune the 16->64 super-resolution model")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--from", dest="from_", metavar="CHECKPOINT",
                       help="pretrain checkpoint (or run directory); omit to train from scratch")
        p.add_argument("--frozen", action="store_true", help="keep encoder weights fixed")
        p.add_argument("--experiment", help="row name in the summary table")

    p = sub.add_parser("eval", parents=[common], help="re-evaluate a fine-tuned checkpoint")
    p.add_argument("--from", dest="from_", metavar="CHECKPOINT", required=True)
    p.add_argument("--experiment")

    p = sub.add_parser("ablate", parents=[common], help="mask-ratio ablation")
    p.add_argument("--mask-ratios", type=_ratios)

    p = sub.add_parser("export-features", parents=[common], help="CLS features of the test split as CSV")
    p.add_argument("--from", dest="from_", metavar="CHECKPOINT", required=True)

    sub.add_parser("plot", parents=[common], help="render SVG figures from report files")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Defaults, then the config file, then command-line flags."""
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    task = args.command.replace("-", "_")
    changes: dict = {"task": task if task != "plot" else config.task}
    for flag, key in (("seed", "seed"), ("out", "out"), ("dataset_root", "dataset_root"),
                      ("epochs", "epochs"), ("mask_ratio", "mask_ratio"), ("mask_ratios", "mask_ratios"),
                      ("per_class", "synth_per_class"), ("pairs", "synth_pairs"),
                      ("experiment", "experiment")):
        value = getattr(args, flag, None)
        if value is not None:
            changes[key] = value
    if getattr(args, "frozen", False):
        changes["finetune_mode"] = "frozen"
    source = getattr(args, "from_", None)
    if source:
        changes["checkpoint"] = source
        changes["init"] = "from_checkpoint"
    return config.replace(**changes)


def dispatch(args: argparse.Namespace) -> dict:
    from . import plots, runs

    config = resolve_config(args)
    cmd = args.command
    if cmd == "synth":
        root = runs.synthesize(config.out, config.synth_per_class, config.synth_pairs, config.seed,
                              config.image_size)
        return {"dataset": str(root)}
    if cmd == "plot":
        return {"written": [str(p) for p in plots.emit_plots(config.out)]}
    handlers = {
        "pretrain": runs.run_pretrain,
        "finetune-cls": runs.run_finetune_cls,
        "finetune-sr": runs.run_finetune_sr,
        "eval": runs.run_eval,
        "ablate": runs.run_ablation,
        "export-features": runs.export_features,
    }
    result = handlers[cmd](config)
    return {"output": str(result), "fingerprint": config.fingerprint()}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config and not Path(args.config).is_file():
        parser.error(f"config file {args.config} not found")
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=args.threads):
            result = dispatch(args)
    except Exception as exc:  # surfaced as a structured record, never a bare traceback
        log.debug("command failed", exc_info=True)
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}),
              file=sys.stderr)
        return 1
    print(json.dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
