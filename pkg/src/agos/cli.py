"""Command-line entry point: ``agos <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 numeric failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .config import TrainConfig, desk_config
from .data import FormatError, SyntheticSceneSpec, save_weak_labels, scan_dataset, split_dataset, synth_generate
from .experiments import KINDS, dataset_for, export_heatmaps, gradcheck, run_experiment
from .tensor import NonFiniteError
from .train import TrainingError, evaluate, load_checkpoint, train

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--seed", type=int)
    common.add_argument("--runs", type=int)
    common.add_argument("--precision", choices=("single", "double"))
    common.add_argument("--out-dir", default="runs")
    common.add_argument("--full-scale", action="store_true", help="start from the full-scale defaults instead of desk-scale")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="agos", description="Multi-grain multiple-instance scene classification")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[common], help="train one model and evaluate it on the held-out split")
    p.add_argument("--data", help="dataset root (default: synthetic scenes)")
    p.add_argument("--ratio", type=float, help="train ratio (default: first of data.train_ratios)")
    p.add_argument("--resume", help="checkpoint directory to continue from")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--ratio", type=float)
    p.add_argument("--all", action="store_true", help="evaluate on the whole dataset instead of the test split")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every parameter group")
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-5)

    sub.add_parser("synth", parents=[common], help="write a synthetic dataset to --out-dir")

    for kind in KINDS:
        p = sub.add_parser(kind, parents=[common], help=f"run the {kind} experiment")
        p.add_argument("--data")

    p = sub.add_parser("export-heatmaps", parents=[common], help="write per-grain instance heatmaps as PGM")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--class-index", type=int, default=-1)
    p.add_argument("--limit", type=int, default=8)
    return parser


def resolve_config(args) -> TrainConfig:
    from .config import tiny_config

    if args.command == "gradcheck":
        cfg = tiny_config()
    else:
        cfg = TrainConfig() if args.full_scale else desk_config()
    if args.config:
        cfg = TrainConfig.load(args.config, cfg)
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    cfg = cfg.with_overrides(overrides)
    flags = {"seed": args.seed, "runs": args.runs, "precision": args.precision}
    if getattr(args, "data", None):
        flags["data_root"] = args.data
    return cfg.replace(**{k: v for k, v in flags.items() if v is not None})


def _cmd_train(args, cfg: TrainConfig) -> int:
    manifest = dataset_for(cfg)
    cfg = cfg.replace(classes=manifest.num_classes)
    ratio = args.ratio or cfg.train_ratios[0]
    tr, te = split_dataset(manifest, ratio, cfg.seed)
    out = Path(args.out_dir)
    params, metrics = train(tr, cfg, out_dir=out, resume=args.resume)
    m = evaluate(params, te, cfg)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["oa"] + [f"acc_{c}" for c in manifest.classes])
        w.writerow([f"{m.overall_accuracy:.9g}"] + [f"{v:.9g}" for v in m.per_class_accuracy])
    print(f"test OA {m.overall_accuracy:.4f} ({len(te)} samples); checkpoint {out / 'final'}")
    return EXIT_OK


def _cmd_eval(args, cfg: TrainConfig) -> int:
    ck = load_checkpoint(args.checkpoint)
    ccfg = ck.config.replace(data_root=cfg.data_root) if cfg.data_root else ck.config
    manifest = dataset_for(ccfg)
    if not args.all:
        _, manifest = split_dataset(manifest, args.ratio or ccfg.train_ratios[0], ccfg.seed)
    m = evaluate(ck.params, manifest, ccfg)
    print(f"OA {m.overall_accuracy:.4f} over {len(manifest)} samples")
    for name, acc in zip(manifest.classes, m.per_class_accuracy):
        print(f"  {name:<20} {acc:.4f}")
    return EXIT_OK


def _cmd_synth(args, cfg: TrainConfig) -> int:
    root = Path(args.out_dir)
    manifest, weak = synth_generate(SyntheticSceneSpec.from_train(cfg), cfg.synth_seed, root=root)
    save_weak_labels(root / "weak_labels.agt", weak)
    with open(root / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "class_index"])
        w.writerows((str(Path(p).relative_to(root)), c) for p, c in manifest.samples)
    print(f"wrote {len(manifest)} images in {manifest.num_classes} classes to {root}")
    return EXIT_OK


def _cmd_heatmaps(args, cfg: TrainConfig) -> int:
    ck = load_checkpoint(args.checkpoint)
    ccfg = ck.config.replace(data_root=cfg.data_root) if cfg.data_root else ck.config
    manifest = scan_dataset(ccfg.data_root) if ccfg.data_root else dataset_for(ccfg)
    paths = export_heatmaps(ck.params, manifest, ccfg, args.out_dir, args.class_index, args.limit)
    print(f"wrote {len(paths)} heatmaps to {args.out_dir}")
    return EXIT_OK


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "train":
            return _cmd_train(args, cfg)
        if args.command == "eval":
            return _cmd_eval(args, cfg)
        if args.command == "gradcheck":
            report = gradcheck(cfg, args.epsilon, args.tolerance)
            print(report.format())
            return report.exit_code
        if args.command == "synth":
            return _cmd_synth(args, cfg)
        if args.command == "export-heatmaps":
            return _cmd_heatmaps(args, cfg)
        path = run_experiment(args.command, cfg, args.out_dir)
        print(path.read_text(encoding="utf-8"), end="")
        return EXIT_OK
    except (UsageError, KeyError, ValueError) as exc:
        if isinstance(exc, (FormatError, np.linalg.LinAlgError)):
            code = EXIT_IO if isinstance(exc, FormatError) else EXIT_NUMERIC
        else:
            code = EXIT_USAGE
        print(f"agos: error: {exc}", file=sys.stderr)
        return code
    except (NonFiniteError, TrainingError) as exc:
        print(f"agos: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"agos: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
