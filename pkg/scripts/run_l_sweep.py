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

from src.analysis.sweeps import load_experiment_data, sweep_L
from src.cli.main import LOG_FORMAT
from src.config.experiment_config import load_config
from src.config.model_config import StrategyKind, list_strategy_kinds
from src.reports.generate_report import check_frozen_prefix_claim, render_sweep, write_claims

# -------------------------------------------------------------------
# Paths
# -------------------------------------------------------------------

CONFIG_PATH = os.path.join(PROJECT_ROOT, "data", "examples", "desk_scale.ini")
OUTPUT_DIR = os.path.join(PROJECT_ROOT, "outputs", "l_sweep")


def main() -> None:
    """L-sweep for every transfer kind, sharing one dataset and one cache."""
    logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
    print(f"Project root detected as: {PROJECT_ROOT}")
    print(f"Loading config from: {CONFIG_PATH}")

    config = load_config(CONFIG_PATH)
    data = load_experiment_data(config, need_source=True)
    out_root = Path(OUTPUT_DIR)

    checks = []
    for kind in list_strategy_kinds():
        if not kind.is_transfer:
            continue
        table = sweep_L(config, data, kind=kind, out_root=out_root / kind.cli_name)
        print(f"\n--- L-sweep, {kind.value} ---")
        print(render_sweep(table, "L"))
        if kind is StrategyKind.ST_FT:
            checks.append(check_frozen_prefix_claim(table))

    write_claims(checks, out_root)
    for check in checks:
        print(check.describe())


if __name__ == "__main__":
    main()
