"""
Entry point for running one adversarial transfer-learning experiment end to end.

Pipeline:
1. Load the run configuration (INI file or defaults)
2. Read the datasets from the configured root, or render them in memory
3. Train the configured strategy once per seed (source models come from
   the pretrain cache)
4. Evaluate on the held-out target containers
5. Print the per-seed summary and the mean / std rows

Every run writes model.mrv, trace.tsv, metrics.csv and resolved_config.ini
below the configured output directory. The `advxfer` console script
(src/cli/main.py) exposes the sweeps and the strategy comparison.
"""

from __future__ import annotations

import logging
import os
from typing import Optional

from src.analysis.sweeps import load_experiment_data, run_experiment
from src.cli.main import LOG_FORMAT
from src.config.experiment_config import load_config

BASE_DIR = os.path.dirname(os.path.abspath(__file__))
DEFAULT_CONFIG_PATH = os.path.join(BASE_DIR, "data", "examples", "desk_scale.ini")


def main(config_path: Optional[str] = DEFAULT_CONFIG_PATH) -> None:
    """
    Run the configured strategy on the configured split.

    Parameters
    ----------
    config_path : str or None
        INI configuration. None runs the built-in defaults (full scale,
        which takes hours on a CPU).
    """
    logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
    print("\n=== Adversarial transfer learning: single experiment ===\n")

    config = load_config(config_path)
    spec = config.strategy_spec()
    print(f"Strategy {spec.kind.value} on split {config.split_id}, seeds {list(config.seeds)}")
    print(f"Spec: {spec.describe()}")

    data = load_experiment_data(config, need_source=spec.kind.is_transfer)
    print(f"\nTarget train: {len(data.target_train)} images")
    print(data.target_train.container_counts())
    print(f"\nTarget test: {len(data.target_test)} images")
    print(data.target_test.container_counts())

    outcome = run_experiment(config, data)

    print("\n--- Test accuracy per seed ---")
    print(outcome["summary"])
    print(f"\nOutputs written to: {outcome['out_dir']}\n")


if __name__ == "__main__":
    main()
