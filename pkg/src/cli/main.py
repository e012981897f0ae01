"""
Command-line entry point.

Subcommands:
    gen-data   render the source and target datasets to disk
    pretrain   train (or reuse) a cached source model and report its source accuracy
    train      run the configured strategy for every configured seed
    sweep-l    test accuracy against the number of frozen blocks
    sweep-eps  test accuracy against the source radius eps^s
    compare    all six strategies, per-container mean and std
    eval       evaluate a saved checkpoint on the target test set

Exit codes: 0 ok, 2 configuration, 3 data, 4 divergence, 5 io/persistence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import pandas as pd

from src.analysis.sweeps import (
    compare_strategies,
    load_experiment_data,
    run_experiment,
    sweep_epsilon,
    sweep_L,
)
from src.config.experiment_config import ExperimentConfig, load_config, parse_seeds
from src.config.model_config import EPSILON_GRID, L_GRID, StrategyKind
from src.data_generation.generate_synthetic_containers import generate_target_dataset
from src.data_generation.generate_synthetic_shapes import generate_source_dataset
from src.data_ingestion.loader import write_dataset
from src.errors import AdvXferError, ConfigurationError, PersistenceError
from src.ml.cache import PretrainCache, pretrain_cache
from src.ml.evaluate import evaluate
from src.model import load_checkpoint
from src.reports.generate_report import (
    check_frozen_prefix_claim,
    check_robust_source_claim,
    render_sweep,
    render_text_table,
    write_claims,
    write_comparison_report,
)

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"
SOURCE_EVAL_PER_CLASS = 100


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _grid(parse: Callable[[str], object]) -> Callable[[str], List[object]]:
    def inner(text: str) -> List[object]:
        try:
            return [parse(v) for v in text.split(",") if v.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"bad grid {text!r}: {exc}") from exc

    return inner


def _strategy(text: str) -> StrategyKind:
    try:
        return StrategyKind.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"unknown strategy {text!r}") from exc


def _seeds(text: str):
    try:
        return parse_seeds(text)
    except AdvXferError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="INI config file (defaults when omitted)")
    parser.add_argument("--split", choices=["s1", "s2", "s3"], help="target split")
    parser.add_argument(
        "--strategy",
        type=_strategy,
        metavar="{st,at,st-ft,st-aft,at-ft,at-aft}",
        help="training strategy",
    )
    parser.add_argument("--l", dest="frozen_prefix", type=int, help="number of frozen blocks")
    parser.add_argument("--eps-s", dest="eps_s", type=float, help="source-phase radius")
    parser.add_argument("--eps-t", dest="eps_t", type=float, help="target-phase radius")
    parser.add_argument("--seed", type=int, help="single seed (overrides --seeds)")
    parser.add_argument("--seeds", type=_seeds, help="seed list, e.g. 0..4 or 0,3,7")
    parser.add_argument("--out", dest="out_dir", help="output directory")
    parser.add_argument("--jobs", type=int, help="worker processes for grid points")
    parser.add_argument("--data", help="dataset root (generated in memory when absent)")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advxfer", description="Adversarial transfer-learning experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_common(sub.add_parser("gen-data", help="render datasets to --data (or <out>/data)"))
    _add_common(sub.add_parser("train", help="run the configured strategy for every seed"))

    p = sub.add_parser("pretrain", help="train or reuse a cached source model")
    _add_common(p)
    p.add_argument("--attack-eps", type=float, help="also report robust source accuracy at this radius")

    p = sub.add_parser("sweep-l", help="accuracy against the number of frozen blocks")
    _add_common(p)
    p.add_argument("--grid", type=_grid(int), default=list(L_GRID), help="comma-separated L values")

    p = sub.add_parser("sweep-eps", help="accuracy against the source radius")
    _add_common(p)
    p.add_argument("--grid", type=_grid(float), default=list(EPSILON_GRID), help="comma-separated eps^s values")
    p.add_argument("--no-baseline", action="store_true", help="skip the ST baseline runs and the claim check")

    _add_common(sub.add_parser("compare", help="all six strategies, per container"))

    p = sub.add_parser("eval", help="evaluate a checkpoint on the target test set")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--attack-eps", type=float, help="also report robust accuracy at this radius")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file values with CLI flags layered on top."""
    config = load_config(args.config)
    seeds = (args.seed,) if args.seed is not None else args.seeds
    data = config.data
    if args.data is not None:
        data = replace(data, root=args.data)
    return config.with_overrides(
        split_id=args.split,
        strategy=args.strategy,
        frozen_prefix=args.frozen_prefix,
        eps_s=args.eps_s,
        eps_t=args.eps_t,
        seeds=seeds,
        out_dir=args.out_dir,
        jobs=args.jobs,
        data=data,
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args: argparse.Namespace, config: ExperimentConfig) -> int:
    root = Path(config.data.root) if config.data.root else Path(config.out_dir) / "data"
    train, test = generate_target_dataset(config.split_config(), seed=config.data.seed, progress=config.train.progress)
    source = generate_source_dataset(
        num_classes=config.data.source_classes,
        size=config.source_size(len(train)),
        seed=config.data.seed,
        image_size=config.data.image_size,
        target_train_size=len(train),
        progress=config.train.progress,
    )
    for dataset in (source, train, test):
        write_dataset(dataset, root)

    counts = pd.concat(
        [
            train.container_counts().rename("target-train"),
            test.container_counts().rename("target-test"),
        ],
        axis=1,
    ).fillna(0).astype(int)
    counts.index.name = "container_id"
    try:
        counts.to_csv(root / "container_counts.csv", lineterminator="\n")
    except OSError as exc:
        raise PersistenceError(f"cannot write container counts to {root}: {exc}") from exc
    print(f"\n--- Datasets written to {root} ---")
    print(f"source: {len(source)} images, {source.num_classes} classes")
    print(counts)
    return 0


def cmd_pretrain(args: argparse.Namespace, config: ExperimentConfig) -> int:
    kind = config.strategy
    if kind not in (StrategyKind.ST, StrategyKind.AT):
        kind = StrategyKind.AT if config.strategy_spec().source_budget is not None else StrategyKind.ST
    budget = None
    if kind is StrategyKind.AT:
        if config.eps_s is None:
            raise ConfigurationError("adversarial pre-training needs --eps-s")
        budget = config.attack.budget(config.eps_s)

    data = load_experiment_data(config, need_source=True)
    cache = PretrainCache.open(config.cache_dir)
    rows = []
    for seed in config.seeds:
        train_cfg = config.train_config(seed)
        model, record, path = pretrain_cache(data.source, kind, budget, train_cfg, cache=cache, widths=config.model.widths)
        held_out = generate_source_dataset(
            num_classes=config.data.source_classes,
            size=SOURCE_EVAL_PER_CLASS * config.data.source_classes,
            seed=config.data.seed + 1 + seed,
            image_size=config.data.image_size,
        )
        attack = None if args.attack_eps is None else config.attack.budget(args.attack_eps)
        report = evaluate(model, held_out, attack=attack, seed=seed)
        rows.append(
            {
                "seed": seed,
                "checkpoint": str(path),
                "final_train_acc": record.final_acc,
                "source_accuracy": report.overall_accuracy,
                "robust_accuracy": report.robust_accuracy,
            }
        )
    table = pd.DataFrame(rows)
    out = Path(config.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        table.to_csv(out / f"pretrain_{kind.cli_name}.csv", index=False, float_format="%.6f", lineterminator="\n")
    except OSError as exc:
        raise PersistenceError(f"cannot write source model table to {out}: {exc}") from exc
    print(f"\n--- Source models ({kind.value}), cache hits {cache.hits}, misses {cache.misses} ---")
    print(table)
    return 0


def cmd_train(args: argparse.Namespace, config: ExperimentConfig) -> int:
    outcome = run_experiment(config)
    print(f"\n--- {config.strategy.value} on split {config.split_id} ---")
    print(outcome["summary"])
    return 0


def cmd_sweep_l(args: argparse.Namespace, config: ExperimentConfig) -> int:
    kind = config.strategy if config.strategy.is_transfer else StrategyKind.ST_FT
    data = load_experiment_data(config, need_source=True)
    out = Path(config.out_dir)
    table = sweep_L(config, data, kind=kind, grid=args.grid, out_root=out)
    print(f"\n--- L-sweep, {kind.value} ---")
    print(render_sweep(table, "L"))
    if 1 in args.grid and 4 in args.grid:
        write_claims([check_frozen_prefix_claim(table)], out)
    return 0


def cmd_sweep_eps(args: argparse.Namespace, config: ExperimentConfig) -> int:
    kind = config.strategy if config.strategy in (StrategyKind.AT_FT, StrategyKind.AT_AFT) else StrategyKind.AT_FT
    data = load_experiment_data(config, need_source=True)
    out = Path(config.out_dir)
    table = sweep_epsilon(config, data, kind=kind, grid=args.grid, frozen_prefix=config.frozen_prefix, out_root=out)
    print(f"\n--- eps^s-sweep, {kind.value}, L={config.frozen_prefix} ---")
    print(render_sweep(table, "eps_s"))
    if not args.no_baseline:
        baseline = compare_strategies(config, data, kinds=[StrategyKind.ST], out_root=out / "baseline")
        write_claims([check_robust_source_claim(table, baseline.runs["overall"])], out)
    return 0


def cmd_compare(args: argparse.Namespace, config: ExperimentConfig) -> int:
    data = load_experiment_data(config, need_source=True)
    out = Path(config.out_dir)
    comparison = compare_strategies(config, data, out_root=out)
    path = write_comparison_report(comparison, out)
    print(path.read_text(encoding="utf-8"))
    return 0


def cmd_eval(args: argparse.Namespace, config: ExperimentConfig) -> int:
    model = load_checkpoint(args.checkpoint)
    data = load_experiment_data(config, need_source=False)
    attack = None if args.attack_eps is None else config.attack.budget(args.attack_eps)
    report = evaluate(model, data.target_test, attack=attack, seed=config.seeds[0])
    out = Path(config.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PersistenceError(f"cannot create output directory {out}: {exc}") from exc
    report.write(out, prefix="eval")
    print(render_text_table(report.to_frame().set_index("scope"), f"Evaluation of {args.checkpoint}"))
    return 0


COMMANDS: Dict[str, Callable[[argparse.Namespace, ExperimentConfig], int]] = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "sweep-l": cmd_sweep_l,
    "sweep-eps": cmd_sweep_eps,
    "compare": cmd_compare,
    "eval": cmd_eval,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT, force=True)
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](args, config)
    except AdvXferError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
