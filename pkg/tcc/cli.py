# tcc/cli.py
"""
Command-line front end.

    tcc convert  CSV OUT --channels C --length T --classes K
    tcc synth    [--config FILE] [--out-dir DIR]
    tcc run      PROTOCOL [--config FILE] [--seed N] [--labels-fraction F] [--ablation NAME]
                 [--set section.key=value ...] [--sweep key=v1,v2] [--dry-run]
    tcc report   RUN_DIR... [--group] [--out FILE]
    tcc inspect  FILE.tsd

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric failure.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from pydantic import ValidationError

from tcc.config import ABLATIONS, RunConfig, ablation_preset, apply_overrides, describe_defaults, load_run_config
from tcc.data import class_counts, import_csv, load_dataset, make_synthetic, read_header, save_dataset
from tcc.errors import ConfigError, LossInputError, TCCError
from tcc.pipeline import PROTOCOLS, run_protocol, run_sweep, validate_run
from tcc.reports import aggregate_reports, read_reports, write_summary
from tcc.utils import as_percent, draw_seed, file_fingerprint, make_rng

logger = logging.getLogger("tcc")


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1 like config errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _percent(value: float) -> str:
    return f"{as_percent(value)}%"


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config)
    return apply_overrides(cfg, args.set or [])


# --------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------
def cmd_convert(args) -> int:
    d = import_csv(args.csv, args.channels, args.length, args.classes)
    path = save_dataset(d, args.out)
    print(f"✅ {len(d)} rows written to {path}")
    print(f"sha256 {file_fingerprint(path)}")
    return 0


def cmd_synth(args) -> int:
    synth = _load_config(args).synth
    out_dir = Path(args.out_dir)
    train_seed, test_seed = (draw_seed(rng) for rng in make_rng(synth.seed).spawn(2))
    for name, seed in (("train", train_seed), ("test", test_seed)):
        d = make_synthetic(
            synth.n_per_class,
            synth.channels,
            synth.length,
            synth.num_classes,
            synth.noise_sigma,
            seed,
            base_frequency=synth.base_frequency,
            phase_jitter=synth.phase_jitter,
            amplitude_jitter=synth.amplitude_jitter,
        )
        path = save_dataset(d, out_dir / f"{name}.tsd")
        print(f"💾 {path}: N={len(d)} C={d.channels} T={d.length} class counts {class_counts(d.labels, d.num_classes)}")
    print(f"use with --set data.train_path={out_dir / 'train.tsd'} --set data.test_path={out_dir / 'test.tsd'}")
    return 0


def _run_assignments(args) -> List[str]:
    """Dedicated flags as dotted assignments, applied after the file and --set."""
    out = []
    if args.seed is not None:
        out.append(f"train.seed={args.seed}")
    if args.labels_fraction is not None:
        out.append(f"train.labels_fraction={args.labels_fraction}")
    if args.epochs is not None:
        out.append(f"train.epochs={args.epochs}")
    if args.progress:
        out.append("train.progress=true")
    if args.ablation is not None:
        for key, value in ablation_preset(args.ablation).model_dump(mode="json").items():
            out.append(f"train.ablation.{key}={str(value).lower() if isinstance(value, bool) else value}")
    return out


def _with_run_paths(cfg: RunConfig, args) -> RunConfig:
    """--train/--test/--out are taken verbatim as paths, never YAML-typed."""
    paths = {
        field: Path(value)
        for field, value in (("train_path", args.train), ("test_path", args.test), ("output_dir", args.out))
        if value is not None
    }
    if not paths:
        return cfg
    return cfg.model_copy(update={"data": cfg.data.model_copy(update=paths)})


def _parse_sweep(raw: str):
    if "=" not in raw:
        raise ConfigError(f"--sweep {raw!r} must look like section.key=v1,v2")
    key, values = raw.split("=", 1)
    values = [v.strip() for v in values.split(",") if v.strip()]
    if not values:
        raise ConfigError(f"--sweep {raw!r} lists no values")
    return key.strip(), values


def cmd_run(args) -> int:
    cfg = _with_run_paths(apply_overrides(_load_config(args), _run_assignments(args)), args)
    sweep = _parse_sweep(args.sweep) if args.sweep else None

    if args.dry_run:
        configs = [cfg]
        if sweep:
            key, values = sweep
            configs = [apply_overrides(cfg, [f"{key}={v}"]) for v in values]
        for candidate in configs:
            summary = validate_run(candidate)
            print("✅ " + ", ".join(f"{k}={v}" for k, v in summary.items()))
        return 0

    if sweep:
        key, values = sweep
        reports = run_sweep(args.protocol, cfg, None, key, values)
        for value, report in zip(values, reports):
            m = report.metrics
            print(f"{key}={value}: accuracy {_percent(m.accuracy)} MF1 {_percent(m.mf1)}")
        return 0

    report = run_protocol(args.protocol, cfg)
    m = report.metrics
    print(f"{report.protocol} seed {report.seed}: accuracy {_percent(m.accuracy)} MF1 {_percent(m.mf1)}")
    return 0


def cmd_report(args) -> int:
    summary = aggregate_reports(read_reports(args.run_dirs), group=args.group)
    print(summary.to_string(index=False))
    if args.out:
        write_summary(summary, args.out)
    return 0


def cmd_inspect(args) -> int:
    header = read_header(args.path)
    for key, value in header.items():
        print(f"{key}: {value}")
    d = load_dataset(args.path)
    counts = class_counts(d.labels, d.num_classes)
    for k, n in enumerate(counts):
        print(f"class {k}: {n}")
    unlabeled = len(d) - sum(counts)
    if unlabeled:
        print(f"unlabeled: {unlabeled}")
    return 0


# --------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="tcc",
        description="Contrastive time-series representation learning with temporal and contextual contrasting.",
        epilog=describe_defaults(),
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging.")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="Convert a CSV (C*T values then label per row) to TSD1.")
    p.add_argument("csv", type=Path)
    p.add_argument("out", type=Path)
    p.add_argument("--channels", type=int, required=True)
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--classes", type=int, required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("synth", help="Write a synthetic train/test pair (synth section of the config).")
    p.add_argument("--config", type=Path, help="YAML run config.")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="Config override, repeatable.")
    p.add_argument("--out-dir", default="data/synth", help="Output directory (default: data/synth).")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="Run a protocol end to end.", epilog=describe_defaults())
    p.add_argument("protocol", choices=PROTOCOLS)
    p.add_argument("--config", type=Path, help="YAML run config.")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="Config override, repeatable.")
    p.add_argument("--train", help="data.train_path")
    p.add_argument("--test", help="data.test_path")
    p.add_argument("--out", help="data.output_dir")
    p.add_argument("--seed", type=int, help="train.seed (default 0)")
    p.add_argument("--labels-fraction", type=float, help="train.labels_fraction (default 1.0)")
    p.add_argument("--epochs", type=int, help="train.epochs (default 40)")
    p.add_argument("--ablation", choices=sorted(ABLATIONS), help="train.ablation preset (default full)")
    p.add_argument("--progress", action="store_true", help="train.progress: tqdm bars per phase")
    p.add_argument("--sweep", metavar="KEY=V1,V2", help="One run per value, e.g. train.model.k_fraction=0.1,0.4,0.7")
    p.add_argument("--dry-run", action="store_true", help="Validate config and data shapes without training.")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="Mean and std of report.csv over run directories.")
    p.add_argument("run_dirs", nargs="+", type=Path)
    p.add_argument("--group", action="store_true", help="Allow several protocols, one row per group.")
    p.add_argument("--out", type=Path, help="Write the summary CSV here.")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("inspect", help="Print a TSD1 header and label histogram.")
    p.add_argument("path", type=Path)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(message)s")

    try:
        return args.func(args)
    except (TCCError, ValidationError, FileNotFoundError, LossInputError) as e:
        code = e.exit_code if isinstance(e, TCCError) else 1 if isinstance(e, ValidationError) else 2
        logger.error("❌ %s", e)
        return code


if __name__ == "__main__":
    sys.exit(main())
