from __future__ import annotations

import os
import sys

# -------------------------------------------------------------------
# Make sure we can import `src.*` no matter where we run from
# -------------------------------------------------------------------

THIS_FILE = os.path.abspath(__file__)
PROJECT_ROOT = os.path.dirname(os.path.dirname(THIS_FILE))

if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

import logging
from pathlib import Path

from src.analysis.sweeps import best_epsilon, compare_strategies, load_experiment_data, sweep_epsilon
from src.cli.main import LOG_FORMAT
from src.config.experiment_config import load_config
from src.config.model_config import StrategyKind
from src.reports.generate_report import (
    check_robust_source_claim,
    render_sweep,
    write_claims,
    write_comparison_report,
)

# -------------------------------------------------------------------
# Paths
# -------------------------------------------------------------------

CONFIG_PATH = os.path.join(PROJECT_ROOT, "data", "examples", "desk_scale.ini")
OUTPUT_DIR = os.path.join(PROJECT_ROOT, "outputs", "comparison")


def main() -> None:
    """
    eps^s-sweep for AT_FT, then all six strategies with AT_FT at the best
    eps^s, then the robust-source claim check against ST.
    """
    logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
    print(f"Project root detected as: {PROJECT_ROOT}")
    print(f"Loading config from: {CONFIG_PATH}")

    config = load_config(CONFIG_PATH)
    data = load_experiment_data(config, need_source=True)
    out_root = Path(OUTPUT_DIR)

    eps_table = sweep_epsilon(config, data, kind=StrategyKind.AT_FT, out_root=out_root / "eps_sweep")
    print("\n--- eps^s-sweep, AT_FT ---")
    print(render_sweep(eps_table, "eps_s"))

    comparison = compare_strategies(config.with_overrides(eps_s=best_epsilon(eps_table)), data, out_root=out_root)
    runs = comparison.runs
    check = check_robust_source_claim(eps_table, runs.loc[runs["strategy"] == StrategyKind.ST.value, "overall"])
    print(write_comparison_report(comparison, out_root).read_text(encoding="utf-8"))

    write_claims([check], out_root)
    print(check.describe())


if __name__ == "__main__":
    main()
