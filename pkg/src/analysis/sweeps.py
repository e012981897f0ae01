"""
Experiment orchestration: single runs, the L-sweep, the eps^s-sweep and
the six-strategy comparison.

Every experiment is a list of grid points (strategy kind, L, eps^s, eps^t,
seed). Each point trains its own model through `run_strategy`, evaluates
it on the target test set and writes its artifacts to its own directory:

    <out>/<point label>/model.mrv
    <out>/<point label>/trace.tsv
    <out>/<point label>/metrics.csv, metrics_confusion.csv
    <out>/<point label>/resolved_config.ini

Points run in a process pool when `jobs > 1`. The pretrain cache is the
only shared state; source models are warmed up before the grid starts so
workers only read it. A point that fails yields a failure row; sweeps
never drop grid points silently.
"""

from __future__ import annotations

import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.config.experiment_config import ExperimentConfig
from src.config.model_config import (
    DEFAULT_FROZEN_PREFIX,
    EPSILON_GRID,
    L_GRID,
    StrategyKind,
    list_strategy_kinds,
)
from src.data_generation.generate_synthetic_containers import generate_target_dataset
from src.data_generation.generate_synthetic_shapes import generate_source_dataset
from src.data_ingestion.loader import read_dataset
from src.datasets import Dataset, DatasetRole
from src.errors import (
    AdvXferError,
    ConfigurationError,
    DataError,
    DivergenceError,
    PersistenceError,
)
from src.ml.cache import PretrainCache, pretrain_cache
from src.ml.evaluate import MetricsReport, evaluate, summarize_seeds
from src.ml.strategies import RunTrace, StrategySpec, final_train_accuracy_ok, run_strategy
from src.model import save_checkpoint

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = [
    "strategy",
    "L",
    "eps_s",
    "eps_t",
    "seed",
    "status",
    "accuracy",
    "accuracy_std",
    "final_train_acc",
    "converged",
    "error",
]

_ERROR_BY_EXIT_CODE = {2: ConfigurationError, 3: DataError, 4: DivergenceError, 5: PersistenceError}


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

@dataclass
class ExperimentData:
    source: Optional[Dataset]
    target_train: Dataset
    target_test: Dataset


def load_experiment_data(config: ExperimentConfig, need_source: bool = True) -> ExperimentData:
    """
    Read the datasets from ``config.data.root`` or, without a root, render
    them in memory from ``config.data.seed``.

    Raises:
        DataError: the configured root is missing, incomplete or lacks the
            source images a transfer strategy needs.
    """
    if config.data.root:
        root = Path(config.data.root)
        train = read_dataset(root, DatasetRole.TARGET_TRAIN, config.split_id)
        test = read_dataset(root, DatasetRole.TARGET_TEST, config.split_id)
        source = read_dataset(root, DatasetRole.SOURCE) if need_source else None
        return ExperimentData(source, train, test)

    train, test = generate_target_dataset(config.split_config(), seed=config.data.seed, progress=config.train.progress)
    source = None
    if need_source:
        source = generate_source_dataset(
            num_classes=config.data.source_classes,
            size=config.source_size(len(train)),
            seed=config.data.seed,
            image_size=config.data.image_size,
            target_train_size=len(train),
            progress=config.train.progress,
        )
    return ExperimentData(source, train, test)


# ---------------------------------------------------------------------------
# Grid points
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridPoint:
    kind: StrategyKind
    seed: int
    frozen_prefix: int = DEFAULT_FROZEN_PREFIX
    eps_s: Optional[float] = None
    eps_t: Optional[float] = None
    source_seed: Optional[int] = None

    @property
    def label(self) -> str:
        parts = [self.kind.cli_name]
        if self.kind.is_transfer:
            parts.append(f"L{self.frozen_prefix}")
        if self.eps_s is not None:
            parts.append(f"eps{self.eps_s:g}")
        if self.eps_t is not None:
            parts.append(f"epst{self.eps_t:g}")
        parts.append(f"seed{self.seed}")
        return "_".join(parts)

    def spec(self, config: ExperimentConfig) -> StrategySpec:
        return config.strategy_spec(self.kind, eps_s=self.eps_s, eps_t=self.eps_t, frozen_prefix=self.frozen_prefix)

    def point_config(self, config: ExperimentConfig) -> ExperimentConfig:
        """The experiment config narrowed to this point, as persisted with its outputs."""
        train = replace(config.train, seed=self.seed, source_seed=self.source_seed)
        return replace(
            config,
            strategy=self.kind,
            frozen_prefix=self.frozen_prefix,
            eps_s=self.eps_s,
            eps_t=self.eps_t,
            seeds=(self.seed,),
            train=train,
        )


@dataclass
class RunResult:
    point: GridPoint
    status: str
    report: Optional[MetricsReport] = None
    trace: Optional[RunTrace] = None
    error: str = ""
    exit_code: int = 0
    out_dir: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def make_point(
    config: ExperimentConfig,
    kind: StrategyKind,
    seed: int,
    frozen_prefix: int,
    eps_s: Optional[float],
    eps_t: Optional[float],
    source_seed: Optional[int],
) -> GridPoint:
    """Grid point carrying the radii the strategy actually uses (defaults resolved)."""
    spec = config.strategy_spec(kind, eps_s=eps_s, eps_t=eps_t, frozen_prefix=frozen_prefix)
    return GridPoint(kind, seed, spec.frozen_prefix, spec.epsilon_s, spec.epsilon_t, source_seed)


def sweep_source_seed(config: ExperimentConfig) -> int:
    """Source models in sweeps are fixed per grid; seeds vary the target phase only."""
    return config.train.source_seed if config.train.source_seed is not None else config.seeds[0]


def execute_point(
    config: ExperimentConfig,
    data: ExperimentData,
    point: GridPoint,
    out_root: Optional[Path],
    cache_root: Optional[Path],
) -> Tuple[Any, RunTrace, MetricsReport]:
    """Train, evaluate and persist one grid point. Errors propagate."""
    point_cfg = point.point_config(config)
    spec = point.spec(config)
    cache = PretrainCache.open(cache_root) if spec.kind.is_transfer and cache_root is not None else None
    model, trace = run_strategy(
        spec, data.source, data.target_train, point_cfg.train, cache=cache, widths=config.model.widths
    )
    report = evaluate(model, data.target_test)
    if out_root is not None:
        out_dir = out_root / point.label
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise PersistenceError(f"cannot create run directory {out_dir}: {exc}") from exc
        save_checkpoint(model, out_dir / "model.mrv")
        trace.write(out_dir / "trace.tsv")
        report.write(out_dir)
        point_cfg.write_resolved(out_dir)
    return model, trace, report


def _safe_execute(
    config: ExperimentConfig,
    data: ExperimentData,
    point: GridPoint,
    out_root: Optional[Path],
    cache_root: Optional[Path],
) -> RunResult:
    out_dir = None if out_root is None else str(out_root / point.label)
    try:
        _, trace, report = execute_point(config, data, point, out_root, cache_root)
    except AdvXferError as exc:
        logger.error("Grid point %s failed: %s", point.label, exc)
        trace = getattr(exc, "trace", None)
        return RunResult(point, "failed", trace=trace, error=str(exc), exit_code=exc.exit_code, out_dir=out_dir)
    except Exception as exc:  # noqa: BLE001 - a crashed point still gets a row
        logger.error("Grid point %s crashed:\n%s", point.label, traceback.format_exc())
        return RunResult(point, "failed", error=f"{type(exc).__name__}: {exc}", exit_code=1, out_dir=out_dir)
    return RunResult(point, "ok", report=report, trace=trace, out_dir=out_dir)


# Process-pool plumbing: the datasets are shipped once per worker.
_WORKER_STATE: Dict[str, Any] = {}


def _init_worker(config: ExperimentConfig, data: ExperimentData, out_root, cache_root) -> None:
    _WORKER_STATE.update(config=config, data=data, out_root=out_root, cache_root=cache_root)


def _worker_point(point: GridPoint) -> RunResult:
    s = _WORKER_STATE
    return _safe_execute(s["config"], s["data"], point, s["out_root"], s["cache_root"])


def _worker_source(request: Tuple[StrategyKind, Optional[float], int]) -> str:
    kind, eps_s, seed = request
    s = _WORKER_STATE
    config: ExperimentConfig = s["config"]
    budget = None if eps_s is None else config.attack.budget(eps_s)
    train_cfg = replace(config.train, seed=seed, source_seed=seed)
    _, _, path = pretrain_cache(
        s["data"].source, kind, budget, train_cfg, cache=PretrainCache.open(s["cache_root"]), widths=config.model.widths
    )
    return str(path)


def _source_requests(config: ExperimentConfig, points: Iterable[GridPoint]) -> List[Tuple[StrategyKind, Optional[float], int]]:
    requests = []
    for point in points:
        if not point.kind.is_transfer:
            continue
        spec = point.spec(config)
        source_adv = spec.source_budget is not None
        seed = point.source_seed if point.source_seed is not None else point.seed
        request = (StrategyKind.AT if source_adv else StrategyKind.ST, spec.epsilon_s if source_adv else None, seed)
        if request not in requests:
            requests.append(request)
    return requests


def run_grid(
    config: ExperimentConfig,
    data: ExperimentData,
    points: Sequence[GridPoint],
    out_root: Optional[Path] = None,
    jobs: Optional[int] = None,
) -> List[RunResult]:
    """Run every point (in a process pool when ``jobs > 1``); results keep grid order."""
    jobs = config.jobs if jobs is None else jobs
    for point in points:
        point.spec(config)
    cache_root = PretrainCache.open(config.cache_dir).root
    if out_root is not None:
        try:
            out_root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise PersistenceError(f"cannot create output directory {out_root}: {exc}") from exc
    logger.info("Running %d grid point(s) with %d job(s)", len(points), jobs)

    if jobs <= 1:
        return [
            _safe_execute(config, data, point, out_root, cache_root)
            for point in tqdm(points, desc="grid", disable=not config.train.progress)
        ]

    with ProcessPoolExecutor(
        max_workers=jobs, initializer=_init_worker, initargs=(config, data, out_root, cache_root)
    ) as pool:
        requests = _source_requests(config, points)
        if requests:
            logger.info("Warming %d source model(s) in the pretrain cache", len(requests))
            list(pool.map(_worker_source, requests))
        results = list(tqdm(pool.map(_worker_point, points), total=len(points), desc="grid", disable=not config.train.progress))
    return results


def raise_for_failures(results: Iterable[RunResult]) -> None:
    """Re-raise the first failure with the error class matching its exit code."""
    for result in results:
        if not result.ok:
            cls = _ERROR_BY_EXIT_CODE.get(result.exit_code, AdvXferError)
            raise cls(f"{result.point.label}: {result.error}")


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def result_row(result: RunResult, floor: float) -> Dict[str, Any]:
    point = result.point
    trace = result.trace
    final_acc = trace.phases[-1].final_acc if trace is not None and trace.phases else float("nan")
    return {
        "strategy": point.kind.value,
        "L": point.frozen_prefix if point.kind.is_transfer else 0,
        "eps_s": point.eps_s,
        "eps_t": point.eps_t,
        "seed": str(point.seed),
        "status": result.status,
        "accuracy": result.report.overall_accuracy if result.ok else float("nan"),
        "accuracy_std": float("nan"),
        "final_train_acc": final_acc,
        "converged": bool(trace is not None and trace.phases and final_train_accuracy_ok(trace, floor)),
        "error": result.error,
    }


def sweep_table(results: Sequence[RunResult], group_by: str, floor: float) -> pd.DataFrame:
    """Seed rows followed by one mean row per value of ``group_by``."""
    rows = [result_row(r, floor) for r in results]
    seed_rows = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    mean_rows = []
    for value, group in seed_rows.groupby(group_by, sort=False, dropna=False):
        ok = group[group["status"] == "ok"]
        acc = ok["accuracy"]
        first = group.iloc[0]
        mean_rows.append(
            {
                "strategy": first["strategy"],
                "L": first["L"],
                "eps_s": first["eps_s"],
                "eps_t": first["eps_t"],
                "seed": "mean",
                "status": "ok" if len(ok) == len(group) else f"{len(ok)}/{len(group)} ok",
                "accuracy": acc.mean() if len(acc) else float("nan"),
                "accuracy_std": acc.std(ddof=1) if len(acc) > 1 else 0.0,
                "final_train_acc": ok["final_train_acc"].mean() if len(ok) else float("nan"),
                "converged": bool(group["converged"].all()),
                "error": "",
            }
        )
    return pd.concat([seed_rows, pd.DataFrame(mean_rows, columns=SWEEP_COLUMNS)], ignore_index=True)


def mean_rows(table: pd.DataFrame) -> pd.DataFrame:
    return table[table["seed"] == "mean"]


def write_table(table: pd.DataFrame, out_root: Path, name: str) -> Path:
    path = out_root / f"{name}.csv"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(path, index=False, float_format="%.6f", lineterminator="\n")
    except OSError as exc:
        raise PersistenceError(f"cannot write {path}: {exc}") from exc
    logger.info("Wrote %s", path)
    return path


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def sweep_L(
    config: ExperimentConfig,
    data: ExperimentData,
    kind: StrategyKind = StrategyKind.ST_FT,
    grid: Sequence[int] = L_GRID,
    seeds: Optional[Sequence[int]] = None,
    out_root: Optional[Path] = None,
) -> pd.DataFrame:
    """
    Test accuracy of a transfer strategy for each number of frozen blocks.

    One row per (L, seed) plus one mean row per L. All points share the
    source model of the fixed sweep source seed.
    """
    if not kind.is_transfer:
        raise ConfigurationError(f"the L-sweep needs a transfer strategy, got {kind.value}")
    seeds = tuple(config.seeds if seeds is None else seeds)
    source_seed = sweep_source_seed(config)
    points = [
        make_point(config, kind, seed, L, config.eps_s, config.eps_t, source_seed)
        for L in grid
        for seed in seeds
    ]
    results = run_grid(config, data, points, out_root=None if out_root is None else out_root / "runs")
    table = sweep_table(results, "L", config.convergence_floor)
    if out_root is not None:
        write_table(table, out_root, f"sweep_L_{kind.cli_name}")
    return table


def sweep_epsilon(
    config: ExperimentConfig,
    data: ExperimentData,
    kind: StrategyKind = StrategyKind.AT_FT,
    grid: Sequence[float] = EPSILON_GRID,
    seeds: Optional[Sequence[int]] = None,
    frozen_prefix: int = DEFAULT_FROZEN_PREFIX,
    out_root: Optional[Path] = None,
) -> pd.DataFrame:
    """
    Test accuracy for each source radius eps^s at fixed L.

    Each eps^s trains (or reuses) one cached source model; seeds only vary
    the target phase.
    """
    if kind not in (StrategyKind.AT_FT, StrategyKind.AT_AFT):
        raise ConfigurationError(f"the eps^s-sweep needs AT_FT or AT_AFT, got {kind.value}")
    seeds = tuple(config.seeds if seeds is None else seeds)
    source_seed = sweep_source_seed(config)
    points = [
        make_point(config, kind, seed, frozen_prefix, float(eps), config.eps_t, source_seed)
        for eps in grid
        for seed in seeds
    ]
    results = run_grid(config, data, points, out_root=None if out_root is None else out_root / "runs")
    table = sweep_table(results, "eps_s", config.convergence_floor)
    if out_root is not None:
        write_table(table, out_root, f"sweep_eps_{kind.cli_name}")
    return table


def best_epsilon(table: pd.DataFrame) -> float:
    """eps^s of the highest mean accuracy; ties go to the smaller radius."""
    means = mean_rows(table).dropna(subset=["accuracy"])
    if means.empty:
        raise DataError("no successful eps^s grid point to choose from")
    means = means.sort_values(["accuracy", "eps_s"], ascending=[False, True], kind="mergesort")
    return float(means.iloc[0]["eps_s"])


@dataclass
class StrategyComparison:
    mean: pd.DataFrame
    std: pd.DataFrame
    runs: pd.DataFrame
    results: List[RunResult]


def compare_strategies(
    config: ExperimentConfig,
    data: ExperimentData,
    kinds: Optional[Sequence[StrategyKind]] = None,
    seeds: Optional[Sequence[int]] = None,
    out_root: Optional[Path] = None,
) -> StrategyComparison:
    """
    Per-strategy, per-container mean and std test accuracy over seeds.

    The mean and std tables have one row per strategy and one column per
    test container plus `overall`. Radii come from the config: eps^s for
    source-adversarial kinds, eps^t (default eps^s, 0.05 for ST_AFT) for
    target-adversarial ones.
    """
    kinds = list_strategy_kinds() if kinds is None else list(kinds)
    seeds = tuple(config.seeds if seeds is None else seeds)
    source_seed = sweep_source_seed(config)
    points = [
        make_point(config, kind, seed, config.frozen_prefix, config.eps_s, config.eps_t, source_seed)
        for kind in kinds
        for seed in seeds
    ]
    results = run_grid(config, data, points, out_root=None if out_root is None else out_root / "runs")

    containers = list(dict.fromkeys(data.target_test.container_ids))
    records = []
    for result in results:
        row: Dict[str, Any] = {"strategy": result.point.kind.value, "seed": result.point.seed, "status": result.status}
        for cid in containers:
            row[cid] = result.report.per_container_accuracy.get(cid, np.nan) if result.ok else np.nan
        row["overall"] = result.report.overall_accuracy if result.ok else np.nan
        summary = result_row(result, config.convergence_floor)
        row["final_train_acc"] = summary["final_train_acc"]
        row["converged"] = summary["converged"]
        records.append(row)
    runs = pd.DataFrame(records)

    value_cols = containers + ["overall"]
    grouped = runs.groupby("strategy", sort=False)[value_cols]
    mean = grouped.mean()
    std = grouped.std(ddof=1).fillna(0.0) if len(seeds) > 1 else grouped.std(ddof=0)

    if out_root is not None:
        write_table(runs, out_root, "compare_runs")
        write_table(mean.reset_index(), out_root, "compare_mean")
        write_table(std.reset_index(), out_root, "compare_std")
    return StrategyComparison(mean=mean, std=std, runs=runs, results=results)


# ---------------------------------------------------------------------------
# Single experiment
# ---------------------------------------------------------------------------

def run_experiment(config: ExperimentConfig, data: Optional[ExperimentData] = None) -> Dict[str, Any]:
    """
    Run the configured strategy for every configured seed and persist
    checkpoint, trace, metrics and resolved config per seed, plus a seed
    summary under ``config.out_dir``.

    Raises:
        The error class of the first failed seed (exit codes 2/3/4/5).
    """
    config.validate()
    out_root = Path(config.out_dir)
    spec = config.strategy_spec()
    data = data if data is not None else load_experiment_data(config, need_source=spec.kind.is_transfer)
    points = [
        GridPoint(
            spec.kind,
            seed,
            frozen_prefix=spec.frozen_prefix,
            eps_s=spec.epsilon_s,
            eps_t=spec.epsilon_t,
            source_seed=config.train.source_seed,
        )
        for seed in config.seeds
    ]
    results = run_grid(config, data, points, out_root=out_root)
    raise_for_failures(results)

    config.write_resolved(out_root)
    reports = {r.point.seed: r.report for r in results}
    summary = summarize_seeds(reports)
    write_table(summary, out_root, "metrics_summary")
    return {"results": results, "summary": summary, "out_dir": out_root}

