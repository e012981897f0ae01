"""
Test-set metrics for a trained classifier.

For a model and a labelled dataset this module computes:
- Overall accuracy (confusion-matrix trace / total)
- Per-class accuracy (recall of each fill level)
- Per-container accuracy, in dataset order of first appearance
- The K x K confusion matrix (rows = true class, columns = prediction)
- Optionally, robust accuracy on PGD-perturbed copies of the test images

and aggregates reports of several seeds into mean / std tables.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import accuracy_score, confusion_matrix

from src.attack import PerturbationBudget, pgd_perturb
from src.config.model_config import FillLevel
from src.datasets import Dataset
from src.errors import ConfigurationError, DataError, PersistenceError
from src.tensor import Tensor

logger = logging.getLogger(__name__)

EVAL_BATCH_SIZE = 256
METRICS_COLUMNS = ["scope", "key", "samples", "accuracy"]


def class_name(index: int, num_classes: int) -> str:
    """Fill-level label for 4-class target heads, else the plain index."""
    if num_classes == len(FillLevel):
        return FillLevel(index).label
    return str(index)


@dataclass
class MetricsReport:
    overall_accuracy: float
    per_class_accuracy: Dict[int, float]
    per_container_accuracy: Dict[str, float]
    container_counts: Dict[str, int]
    confusion: np.ndarray
    robust_accuracy: Optional[float] = None
    attack: Optional[Dict[str, Any]] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def num_samples(self) -> int:
        return int(self.confusion.sum())

    @property
    def num_classes(self) -> int:
        return int(self.confusion.shape[0])

    @property
    def class_counts(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    def to_frame(self) -> pd.DataFrame:
        """Long table: one overall row, one row per class, one per container."""
        rows = [{"scope": "overall", "key": "all", "samples": self.num_samples, "accuracy": self.overall_accuracy}]
        counts = self.class_counts
        for c, acc in self.per_class_accuracy.items():
            rows.append({"scope": "class", "key": class_name(c, self.num_classes), "samples": int(counts[c]), "accuracy": acc})
        for cid, acc in self.per_container_accuracy.items():
            rows.append({"scope": "container", "key": cid, "samples": self.container_counts[cid], "accuracy": acc})
        if self.robust_accuracy is not None:
            rows.append({"scope": "robust", "key": "all", "samples": self.num_samples, "accuracy": self.robust_accuracy})
        return pd.DataFrame(rows, columns=METRICS_COLUMNS)

    def confusion_frame(self) -> pd.DataFrame:
        names = [class_name(c, self.num_classes) for c in range(self.num_classes)]
        return pd.DataFrame(self.confusion, index=pd.Index(names, name="true"), columns=names)

    def write(self, out_dir, prefix: str = "metrics") -> None:
        try:
            self.to_frame().to_csv(f"{out_dir}/{prefix}.csv", index=False, float_format="%.6f", lineterminator="\n")
            self.confusion_frame().to_csv(f"{out_dir}/{prefix}_confusion.csv", lineterminator="\n")
        except OSError as exc:
            raise PersistenceError(f"cannot write {prefix} tables to {out_dir}: {exc}") from exc


# ---------------------------------------------------------------------------
# Core computations
# ---------------------------------------------------------------------------

def predict(model: Any, x: np.ndarray, batch_size: int = EVAL_BATCH_SIZE) -> np.ndarray:
    """Argmax class per image (eval mode); ties go to the lowest class index."""
    out = []
    for start in range(0, x.shape[0], batch_size):
        logits = model.forward(Tensor(x[start:start + batch_size]), training=False).data
        out.append(np.argmax(logits, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate_predictions(
    predictions: Sequence[int],
    labels: Sequence[int],
    container_ids: Sequence[str],
    num_classes: int,
) -> MetricsReport:
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise DataError("cannot evaluate on an empty test set")
    if predictions.shape != labels.shape or len(container_ids) != labels.size:
        raise ConfigurationError("predictions, labels and container ids must have the same length")

    cm = confusion_matrix(labels, predictions, labels=list(range(num_classes)))
    counts = cm.sum(axis=1)
    per_class = {c: float(cm[c, c] / counts[c]) for c in range(num_classes) if counts[c] > 0}

    frame = pd.DataFrame({"container_id": list(container_ids), "correct": predictions == labels})
    grouped = frame.groupby("container_id", sort=False)["correct"]
    per_container = {cid: float(v) for cid, v in grouped.mean().items()}
    container_counts = {cid: int(v) for cid, v in grouped.size().items()}

    return MetricsReport(
        overall_accuracy=float(np.trace(cm) / cm.sum()),
        per_class_accuracy=per_class,
        per_container_accuracy=per_container,
        container_counts=container_counts,
        confusion=cm,
    )


def evaluate(
    model: Any,
    dataset: Dataset,
    attack: Optional[PerturbationBudget] = None,
    seed: int = 0,
    batch_size: int = EVAL_BATCH_SIZE,
) -> MetricsReport:
    """
    Clean metrics of ``model`` on ``dataset``; with ``attack``, also the
    accuracy on PGD-perturbed copies of the same images.

    Raises:
        DataError: empty dataset.
        ConfigurationError: the model head does not match the dataset classes.
    """
    if len(dataset) == 0:
        raise DataError(f"{dataset.role.value} set is empty")
    if model.num_classes != dataset.num_classes:
        raise ConfigurationError(
            f"model predicts {model.num_classes} classes, dataset has {dataset.num_classes}"
        )
    x, y = dataset.to_arrays(dtype=model.mode.dtype)
    report = evaluate_predictions(predict(model, x, batch_size), y, dataset.container_ids, dataset.num_classes)

    if attack is not None:
        adv = np.concatenate(
            [
                pgd_perturb(model, x[s:s + batch_size], y[s:s + batch_size], attack, seed=seed + s)
                for s in range(0, len(y), batch_size)
            ]
        )
        report.robust_accuracy = float(accuracy_score(y, predict(model, adv, batch_size)))
        report.attack = attack.describe()
        logger.info("Robust accuracy %.4f under %s", report.robust_accuracy, report.attack)

    logger.info("Accuracy %.4f on %d %s images", report.overall_accuracy, report.num_samples, dataset.role.value)
    return report


# ---------------------------------------------------------------------------
# Seed aggregation
# ---------------------------------------------------------------------------

def seed_table(reports: Mapping[int, MetricsReport]) -> pd.DataFrame:
    """One row per seed: overall accuracy followed by per-container accuracies."""
    rows: List[Dict[str, Any]] = []
    for seed, report in reports.items():
        row: Dict[str, Any] = {"seed": seed, "overall": report.overall_accuracy}
        row.update(report.per_container_accuracy)
        rows.append(row)
    return pd.DataFrame(rows)


def summarize_seeds(reports: Mapping[int, MetricsReport]) -> pd.DataFrame:
    """Seed rows plus `mean` and `std` (sample std, ddof=1; 0 for one seed)."""
    table = seed_table(reports)
    values = table.drop(columns="seed")
    mean = values.mean()
    std = values.std(ddof=1).fillna(0.0) if len(values) > 1 else values.std(ddof=0)
    summary = pd.concat(
        [table.astype({"seed": str}), pd.DataFrame([{"seed": "mean", **mean}, {"seed": "std", **std}])],
        ignore_index=True,
    )
    return summary
