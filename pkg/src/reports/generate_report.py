"""
Render experiment tables and check the directional claims.

High-level flow:
- Input: the sweep / comparison tables produced by src.analysis.sweeps
- Render aligned text tables (accuracies as percentages, "mean±std")
- Check the two directional claims over seed means:
    * fewer frozen blocks transfer better: acc(L=1) >= acc(L=4)
    * robust source pre-training helps: mean(AT_FT at best eps^s) >= mean(ST)
  flagging overlap when the gap between means is below the pooled std
- List strategies whose training ended below the train-accuracy floor
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional

import pandas as pd

from src.analysis.sweeps import best_epsilon, mean_rows
from src.errors import PersistenceError

logger = logging.getLogger(__name__)

CLAIM_COLUMNS = ["claim", "lhs", "rhs", "lhs_mean", "rhs_mean", "gap", "pooled_std", "holds", "overlap"]


@dataclass
class ClaimCheck:
    claim: str
    lhs: str
    rhs: str
    lhs_mean: float
    rhs_mean: float
    gap: float
    pooled_std: float
    holds: bool
    overlap: bool

    @classmethod
    def compare(cls, claim: str, lhs: str, rhs: str, lhs_vals: pd.Series, rhs_vals: pd.Series) -> "ClaimCheck":
        lhs_vals, rhs_vals = lhs_vals.dropna(), rhs_vals.dropna()
        lhs_mean, rhs_mean = float(lhs_vals.mean()), float(rhs_vals.mean())
        s1 = float(lhs_vals.std(ddof=1)) if len(lhs_vals) > 1 else 0.0
        s2 = float(rhs_vals.std(ddof=1)) if len(rhs_vals) > 1 else 0.0
        pooled = math.sqrt((s1**2 + s2**2) / 2.0)
        gap = lhs_mean - rhs_mean
        return cls(
            claim=claim,
            lhs=lhs,
            rhs=rhs,
            lhs_mean=lhs_mean,
            rhs_mean=rhs_mean,
            gap=gap,
            pooled_std=pooled,
            holds=bool(lhs_mean >= rhs_mean),
            overlap=bool(abs(gap) < pooled),
        )

    def describe(self) -> str:
        verdict = "holds" if self.holds else "does NOT hold"
        flag = " (overlapping: gap below pooled std)" if self.overlap else ""
        return (
            f"{self.claim}: {self.lhs} {self.lhs_mean:.2%} vs {self.rhs} {self.rhs_mean:.2%} "
            f"-> {verdict}{flag}"
        )


# ---------------------------------------------------------------------------
# Claims
# ---------------------------------------------------------------------------

def _seed_rows(table: pd.DataFrame) -> pd.DataFrame:
    return table[(table["seed"] != "mean") & (table["status"] == "ok")]


def check_frozen_prefix_claim(sweep: pd.DataFrame, shallow: int = 1, deep: int = 4) -> ClaimCheck:
    """acc(L=shallow) >= acc(L=deep) on an L-sweep table."""
    rows = _seed_rows(sweep)
    return ClaimCheck.compare(
        "fewer frozen blocks transfer better",
        f"L={shallow}",
        f"L={deep}",
        rows.loc[rows["L"] == shallow, "accuracy"],
        rows.loc[rows["L"] == deep, "accuracy"],
    )


def check_robust_source_claim(eps_sweep: pd.DataFrame, st_overall: pd.Series) -> ClaimCheck:
    """
    mean(AT_FT at its best eps^s) >= mean(ST).

    ``st_overall`` holds the per-seed overall accuracies of ST.
    """
    eps = best_epsilon(eps_sweep)
    rows = _seed_rows(eps_sweep)
    strategy = rows["strategy"].iloc[0] if len(rows) else "AT_FT"
    return ClaimCheck.compare(
        "robust source pre-training helps",
        f"{strategy}(eps_s={eps:g})",
        "ST",
        rows.loc[rows["eps_s"] == eps, "accuracy"],
        st_overall,
    )


def claims_frame(checks: List[ClaimCheck]) -> pd.DataFrame:
    return pd.DataFrame([asdict(c) for c in checks], columns=CLAIM_COLUMNS)


# ---------------------------------------------------------------------------
# Text rendering
# ---------------------------------------------------------------------------

def format_mean_std(mean: pd.DataFrame, std: pd.DataFrame, digits: int = 1) -> pd.DataFrame:
    """Cell-wise "mean±std" strings in percent."""
    def cell(m: float, s: float) -> str:
        if pd.isna(m):
            return "n/a"
        return f"{100 * m:.{digits}f}±{100 * s:.{digits}f}"

    out = pd.DataFrame(index=mean.index, columns=mean.columns, dtype=object)
    for col in mean.columns:
        out[col] = [cell(m, s) for m, s in zip(mean[col], std[col])]
    return out


def render_text_table(frame: pd.DataFrame, title: Optional[str] = None) -> str:
    """Right-aligned plain-text table with the index as first column."""
    text = frame.to_string(justify="right")
    return f"--- {title} ---\n{text}\n" if title else text + "\n"


def render_sweep(table: pd.DataFrame, key: str) -> str:
    means = mean_rows(table)
    view = pd.DataFrame(
        {
            key: means[key].values,
            "accuracy": [f"{100 * m:.1f}±{100 * s:.1f}" for m, s in zip(means["accuracy"], means["accuracy_std"])],
            "status": means["status"].values,
            "converged": means["converged"].values,
        }
    ).set_index(key)
    return render_text_table(view)


def convergence_flags(runs: pd.DataFrame) -> pd.DataFrame:
    """Strategies with at least one seed below the train-accuracy floor."""
    flagged = runs[~runs["converged"].astype(bool)]
    if flagged.empty:
        return pd.DataFrame(columns=["strategy", "seeds_below_floor"])
    grouped = flagged.groupby("strategy", sort=False)["seed"].apply(lambda s: ",".join(str(v) for v in s))
    return grouped.rename("seeds_below_floor").reset_index()


def write_comparison_report(comparison, out_root: Path) -> Path:
    """compare_table.txt: the mean±std table plus convergence flags."""
    table = format_mean_std(comparison.mean, comparison.std)
    lines = [render_text_table(table, "Per-container accuracy (%), mean±std over seeds")]
    flags = convergence_flags(comparison.runs)
    if not flags.empty:
        lines.append(render_text_table(flags.set_index("strategy"), "Runs below the train-accuracy floor"))
    path = Path(out_root) / "compare_table.txt"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines), encoding="utf-8")
    except OSError as exc:
        raise PersistenceError(f"cannot write {path}: {exc}") from exc
    logger.info("Wrote %s", path)
    return path


def write_claims(checks: List[ClaimCheck], out_root: Path) -> Path:
    path = Path(out_root) / "claims.csv"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        claims_frame(checks).to_csv(path, index=False, float_format="%.6f", lineterminator="\n")
    except OSError as exc:
        raise PersistenceError(f"cannot write {path}: {exc}") from exc
    for check in checks:
        logger.info(check.describe())
    return path
