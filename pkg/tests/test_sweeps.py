import numpy as np
import pandas as pd
import pytest

from src.analysis.sweeps import (
    SWEEP_COLUMNS,
    ExperimentData,
    GridPoint,
    best_epsilon,
    compare_strategies,
    make_point,
    mean_rows,
    raise_for_failures,
    run_experiment,
    sweep_epsilon,
    sweep_L,
    write_table,
)
from src.config.experiment_config import AttackConfig, ExperimentConfig, ModelConfig
from src.config.model_config import StrategyKind
from src.errors import ConfigurationError, DataError, PersistenceError
from src.ml.train_models import TrainConfig

from tests.conftest import TINY_WIDTHS


@pytest.fixture
def config(tmp_path):
    return ExperimentConfig(
        seeds=(0, 1),
        out_dir=str(tmp_path / "out"),
        convergence_floor=0.0,
        train=TrainConfig(epochs=1, lr0=0.05, lr_finetune=0.01, batch_size=8),
        attack=AttackConfig(iters=1),
        model=ModelConfig(widths=TINY_WIDTHS),
    )


@pytest.fixture
def data(source_set, target_sets):
    train, test = target_sets
    return ExperimentData(source_set, train, test)


def test_grid_point_labels():
    assert GridPoint(StrategyKind.AT_FT, 3, 1, 0.1, 0.1).label == "at-ft_L1_eps0.1_epst0.1_seed3"
    assert GridPoint(StrategyKind.ST, 0, 2).label == "st_seed0"


def test_make_point_resolves_default_radii(config):
    point = make_point(config, StrategyKind.ST_AFT, 0, 1, None, None, None)
    assert point.eps_t == 0.05 and point.eps_s is None
    clean = make_point(config, StrategyKind.ST_FT, 0, 2, 0.3, 0.3, None)
    assert (clean.eps_s, clean.eps_t) == (None, None)


def test_l_sweep_rows_and_artifacts(config, data, tmp_path):
    out = tmp_path / "sweep"
    table = sweep_L(config, data, grid=(0, 4), out_root=out)
    assert list(table.columns) == SWEEP_COLUMNS
    assert len(table) == 2 * 2 + 2
    means = mean_rows(table)
    assert list(means["L"]) == [0, 4]
    assert (table["status"] == "ok").all()
    assert table["accuracy"].between(0.0, 1.0).all()
    assert (out / "sweep_L_st-ft.csv").exists()
    run_dir = out / "runs" / "st-ft_L4_seed1"
    for name in ("model.mrv", "trace.tsv", "metrics.csv", "metrics_confusion.csv", "resolved_config.ini"):
        assert (run_dir / name).exists(), name


def test_sweep_outputs_are_deterministic(config, data, tmp_path):
    sweep_L(config, data, grid=(1,), seeds=(0,), out_root=tmp_path / "a")
    sweep_L(config, data, grid=(1,), seeds=(0,), out_root=tmp_path / "b")
    for name in ("metrics.csv", "metrics_confusion.csv", "trace.tsv"):
        first = (tmp_path / "a" / "runs" / "st-ft_L1_seed0" / name).read_bytes()
        second = (tmp_path / "b" / "runs" / "st-ft_L1_seed0" / name).read_bytes()
        assert first == second, name


def test_missing_source_yields_failure_rows(config, target_sets):
    train, test = target_sets
    table = sweep_L(config, ExperimentData(None, train, test), grid=(1,))
    seeds = table[table["seed"] != "mean"]
    assert list(seeds["status"]) == ["failed", "failed"]
    assert seeds["accuracy"].isna().all()
    assert all(seeds["error"].str.len() > 0)
    assert mean_rows(table)["status"].iloc[0] == "0/2 ok"


def test_raise_for_failures_uses_exit_code(config, target_sets):
    from src.analysis.sweeps import run_grid

    train, test = target_sets
    results = run_grid(config, ExperimentData(None, train, test), [GridPoint(StrategyKind.ST_FT, 0, 1)])
    assert results[0].exit_code == 2
    with pytest.raises(ConfigurationError):
        raise_for_failures(results)


def test_sweeps_reject_unsuitable_strategies(config, data):
    with pytest.raises(ConfigurationError):
        sweep_L(config, data, kind=StrategyKind.ST)
    with pytest.raises(ConfigurationError):
        sweep_epsilon(config, data, kind=StrategyKind.ST_FT)


def test_epsilon_sweep_groups_by_radius(config, data):
    table = sweep_epsilon(config, data, grid=(0.0, 0.5), seeds=(0,), frozen_prefix=2)
    means = mean_rows(table)
    assert list(means["eps_s"]) == [0.0, 0.5]
    assert set(table["L"]) == {2}


def _eps_table(values):
    rows = [
        {"strategy": "AT_FT", "L": 1, "eps_s": eps, "eps_t": eps, "seed": "mean", "status": "ok", "accuracy": acc}
        for eps, acc in values
    ]
    return pd.DataFrame(rows)


def test_best_epsilon_prefers_smaller_radius_on_ties():
    assert best_epsilon(_eps_table([(0.5, 0.8), (0.1, 0.8), (1.0, 0.7)])) == 0.1
    assert best_epsilon(_eps_table([(0.5, 0.9), (0.1, 0.8)])) == 0.5


def test_best_epsilon_needs_a_result():
    with pytest.raises(DataError):
        best_epsilon(_eps_table([(0.1, np.nan)]))


def test_compare_strategies_tables(config, data, tmp_path):
    comparison = compare_strategies(config, data, kinds=[StrategyKind.ST, StrategyKind.ST_FT], seeds=(0,), out_root=tmp_path)
    assert list(comparison.mean.index) == ["ST", "ST_FT"]
    assert list(comparison.mean.columns)[-1] == "overall"
    assert set(comparison.mean.columns[:-1]) == {"cocktail_glass", "champagne_flute", "beer_cup"}
    assert (comparison.std.to_numpy() == 0.0).all()
    for name in ("compare_runs.csv", "compare_mean.csv", "compare_std.csv"):
        assert (tmp_path / name).exists()


def test_run_experiment_writes_summary(config, target_sets):
    train, test = target_sets
    outcome = run_experiment(config.with_overrides(strategy=StrategyKind.ST), ExperimentData(None, train, test))
    summary = outcome["summary"]
    assert list(summary["seed"]) == ["0", "1", "mean", "std"]
    out = outcome["out_dir"]
    assert (out / "metrics_summary.csv").exists()
    assert (out / "resolved_config.ini").exists()
    assert (out / "st_seed0" / "model.mrv").exists()


def test_unwritable_table_is_a_persistence_error(tmp_path):
    (tmp_path / "blocker").write_text("", encoding="utf-8")
    with pytest.raises(PersistenceError):
        write_table(pd.DataFrame({"a": [1]}), tmp_path / "blocker", "t")
