"""``vasis-lab`` command line.

Exit codes: 0 success, 2 usage error, 3 bad config, 4 dataset error,
5 checkpoint error, 6 non-finite loss during training, 1 anything else.
"""
from __future__ import annotations

import argparse
import sys

from ..data_io import DatasetError
from ..training import NonFiniteLossError
from . import commands
from .checkpoint import CheckpointError
from .config import ConfigError, ExperimentConfig

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATASET = 4
EXIT_CHECKPOINT = 5
EXIT_NONFINITE = 6

EPILOG = """experiments:
  probe    per-block std probe, padding x kernel ablation, position-code checks,
           collapse score (baseline and VASIS side by side)
  count    parameter/FLOP table over noise/position toggles and combination variants
  eval     FID against train and held-out references, mIoU/Acc, intra-class std, costs

exit codes: 0 ok, 2 usage, 3 config, 4 dataset, 5 checkpoint, 6 non-finite loss, 1 other
"""


def _config(args):
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    if args.seed is not None:
        overrides["seed"] = args.seed
    return cfg.replace(**overrides) if overrides else cfg


def build_parser():
    parser = argparse.ArgumentParser(
        prog="vasis-lab", description="Variation-aware semantic image synthesis lab.",
        epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="experiment config JSON (defaults are used if omitted)")
    common.add_argument("-o", "--output-dir", help="run directory (overrides the config)")
    common.add_argument("--seed", type=int, help="run seed (overrides the config)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("make-dataset", parents=[common], help="render the synthetic train and held-out splits")
    p.add_argument("--force", action="store_true", help="overwrite an existing dataset directory")

    p = sub.add_parser("train", parents=[common], help="train a generator/discriminator pair")
    p.add_argument("--resume", metavar="CKPT", help="continue from this checkpoint")
    p.add_argument("--steps", type=int, help="total step count (default: recipe.steps)")

    p = sub.add_parser("probe", parents=[common], help="diagnostic probes and the padding x kernel ablation")
    p.add_argument("--checkpoint", metavar="CKPT", help="probe a trained model instead of a fresh one")

    p = sub.add_parser("eval", parents=[common], help="metric report for a checkpoint")
    p.add_argument("--checkpoint", metavar="CKPT", required=True)

    p = sub.add_parser("count", parents=[common], help="analytic parameter and FLOP table over variants")
    p.add_argument("--no-verify", action="store_true", help="skip the brute-force parameter cross-check")

    p = sub.add_parser("generate", parents=[common], help="sample grid on held-out layouts")
    p.add_argument("--checkpoint", metavar="CKPT")
    p.add_argument("-n", "--count", type=int, default=8, help="number of layouts (default 8)")
    p.add_argument("--out", help="output PNG path")

    p = sub.add_parser("init-config", parents=[common], help="write the default config as JSON")
    p.add_argument("path")
    return parser


def run(args):
    cfg = _config(args)
    if args.command == "make-dataset":
        train, heldout = commands.cmd_make_dataset(cfg, force=args.force)
        print(f"wrote {train} and {heldout}")
    elif args.command == "train":
        commands.cmd_train(cfg, resume=args.resume, steps=args.steps)
    elif args.command == "probe":
        values = commands.cmd_probe(cfg, args.checkpoint)
        print(f"wrote {commands.RunDir(cfg.output_dir).reports / 'probe.txt'}")
        for key in ("collapse.baseline", "collapse.vasis"):
            print(f"{key} = {values[key]:.6f}")
    elif args.command == "eval":
        values = commands.cmd_eval(cfg, args.checkpoint)
        for key in ("fid_t", "fid_v", "miou", "acc", "intra_class_std.mean"):
            print(f"{key} = {values[key]:.6g}")
    elif args.command == "count":
        commands.cmd_count(cfg, verify=not args.no_verify)
        print((commands.RunDir(cfg.output_dir).reports / "count.txt").read_text(), end="")
    elif args.command == "generate":
        print(f"wrote {commands.cmd_generate(cfg, args.checkpoint, args.count, args.out)}")
    elif args.command == "init-config":
        cfg.save(args.path)
        print(f"wrote {args.path}")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    try:
        return run(args)
    except ConfigError as exc:
        code, msg = EXIT_CONFIG, f"config error: {exc}"
    except (DatasetError, FileExistsError) as exc:
        code, msg = EXIT_DATASET, f"dataset error: {exc}"
    except CheckpointError as exc:
        code, msg = EXIT_CHECKPOINT, f"checkpoint error: {exc}"
    except NonFiniteLossError as exc:
        code, msg = EXIT_NONFINITE, f"training aborted: {exc}"
    print(f"vasis-lab: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
