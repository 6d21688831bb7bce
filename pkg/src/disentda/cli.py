"""Command-line entry points: train, eval and sweep.

Exit codes: 0 on success, 2 for configuration problems (bad config file,
bad flag values, unreadable inputs), 3 when training aborts on a
non-finite loss.
"""

from __future__ import annotations

import argparse
import itertools
import sys
from pathlib import Path

from .autodiff import NumericError
from .checkpoint import load_checkpoint
from .trainer import (
    METRICS_HEADER,
    ExperimentConfig,
    config_from_parser,
    evaluate,
    load_config,
    load_datasets,
    load_network_from_checkpoint,
    read_config_file,
    run_experiment,
)
from .util import ConfigError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

ABLATABLE = ("l_task", "l_neighbor", "l_agree")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="disentda",
        description="Train and evaluate the disentangling adaptation lab.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run one training experiment")
    train.add_argument("--config", help="experiment config file (defaults apply if omitted)")
    train.add_argument("--seed", type=int, help="override the config seed")
    train.add_argument(
        "--ablate",
        action="append",
        choices=ABLATABLE,
        default=[],
        help="disable a loss term (repeatable)",
    )
    train.add_argument("--fixed-mask-ratio", type=float, help="replace the mask net with a fixed binary mask")
    train.add_argument("--epochs", type=int, help="override the epoch count")
    train.add_argument("--out", help="override the output directory")
    train.add_argument("--resume", help="checkpoint to resume from")

    evl = sub.add_parser("eval", help="evaluate a checkpoint")
    evl.add_argument("--checkpoint", required=True, help="checkpoint file written by train")
    evl.add_argument("--data", required=True, help="config file describing the model shapes and data")
    evl.add_argument("--out", help="directory for metrics.csv (default: checkpoint's directory)")

    sweep = sub.add_parser("sweep", help="grid of runs over config overrides")
    sweep.add_argument("--config", required=True, help="base experiment config file")
    sweep.add_argument("--grid", required=True, help="grid file: section.key = v1, v2, ... lines")
    sweep.add_argument("--out", help="base output directory for the grid runs")
    return parser


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    for term in args.ablate:
        setattr(cfg, f"disable_{term}", True)
    if args.fixed_mask_ratio is not None:
        cfg.fixed_mask_ratio = args.fixed_mask_ratio
    if args.epochs is not None:
        cfg.epochs = args.epochs
    if args.out is not None:
        cfg.out_dir = args.out
    cfg.validate()
    result = run_experiment(cfg, resume_from=args.resume)
    final = result["final_metrics"]
    for name in sorted(final):
        print(f"{name} = {final[name]}")
    print(f"outputs in {result['out_dir']}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.data)
    network = load_network_from_checkpoint(cfg, args.checkpoint)
    _, train_t, eval_s, eval_t = load_datasets(cfg)
    metrics = evaluate(network, cfg, eval_s, eval_t, train_t)
    epoch = int(float(load_checkpoint(args.checkpoint)["meta.epoch"]))
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [METRICS_HEADER]
    for name in sorted(metrics):
        print(f"{name} = {metrics[name]}")
        rows.append(f"{cfg.run_id},{epoch},{name},{metrics[name]!r}")
    (out_dir / "metrics.csv").write_text("\n".join(rows) + "\n")
    return EXIT_OK


def _parse_grid(path) -> list[tuple[str, str, list[str]]]:
    """Grid lines look like `losses.lambda1 = 0, 0.8`; order is preserved."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"grid file not found: {path}")
    axes = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected section.key = v1, v2, ...")
        target, _, values = line.partition("=")
        target = target.strip()
        if target.count(".") != 1:
            raise ConfigError(f"{path}:{lineno}: parameter must be section.key, got {target!r}")
        section, key = target.split(".")
        choices = [v.strip() for v in values.split(",") if v.strip()]
        if not choices:
            raise ConfigError(f"{path}:{lineno}: no values for {target}")
        axes.append((section, key, choices))
    if not axes:
        raise ConfigError(f"{path}: empty grid")
    return axes


def cmd_sweep(args) -> int:
    base_path = args.config
    axes = _parse_grid(args.grid)
    base_cfg = load_config(base_path)
    out_base = Path(args.out) if args.out else Path(base_cfg.out_dir) / "sweep"
    out_base.mkdir(parents=True, exist_ok=True)
    index_lines = []
    for i, combo in enumerate(itertools.product(*[choices for _, _, choices in axes])):
        cp = read_config_file(base_path)
        labels = []
        for (section, key, _), value in zip(axes, combo):
            if not cp.has_section(section):
                cp.add_section(section)
            cp[section][key] = value
            labels.append(f"{section}.{key}={value}")
        cfg = config_from_parser(cp, base_path)
        cfg.run_id = f"{base_cfg.run_id}-g{i:03d}"
        cfg.out_dir = str(out_base / f"combo_{i:03d}")
        result = run_experiment(cfg)
        final = result["final_metrics"]
        summary = " ".join(f"{k}={v:.4f}" for k, v in sorted(final.items()))
        index_lines.append(f"combo_{i:03d}: {'; '.join(labels)} -> {summary}")
        print(index_lines[-1])
    (out_base / "sweep_index.txt").write_text("\n".join(index_lines) + "\n")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
