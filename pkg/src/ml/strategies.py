"""
The six training strategies and their phase sequences.

    ST      Train(target)
    AT      AdvTrain(target, eps^t)
    ST_FT   Train(source)              -> Finetune(target)
    ST_AFT  Train(source)              -> AdvFinetune(target, eps^t)
    AT_FT   AdvTrain(source, eps^s)    -> Finetune(target)
    AT_AFT  AdvTrain(source, eps^s)    -> AdvFinetune(target, eps^t)

Between the two phases of a transfer strategy the first L residual blocks
(and the stem) are frozen and the classifier head is re-drawn for the
target classes. The sequences themselves live in
`src.config.model_config.STRATEGY_PHASES`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd

from src.attack import PerturbationBudget
from src.config.model_config import (
    DEFAULT_FROZEN_PREFIX,
    DEFAULT_WIDTHS,
    NUM_BLOCKS,
    PGD_ITERS,
    PGD_NORM,
    ST_AFT_TARGET_EPSILON,
    PhasePlan,
    StrategyKind,
    get_phases,
)
from src.datasets import Dataset
from src.errors import ConfigurationError, DivergenceError, PersistenceError
from src.ml.cache import PretrainCache, pretrain_cache, train_source_model
from src.ml.train_models import PhaseRecord, TrainConfig, train
from src.model import MicroResNet, build_model, freeze_prefix, replace_head

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Strategy specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StrategySpec:
    kind: StrategyKind
    source_budget: Optional[PerturbationBudget] = None
    target_budget: Optional[PerturbationBudget] = None
    frozen_prefix: int = DEFAULT_FROZEN_PREFIX

    def __post_init__(self) -> None:
        for plan in get_phases(self.kind):
            if plan.budget == "source" and self.source_budget is None:
                raise ConfigurationError(f"strategy {self.kind.value} trains adversarially on the source: eps^s is required")
            if plan.budget == "target" and self.target_budget is None:
                raise ConfigurationError(f"strategy {self.kind.value} trains adversarially on the target: eps^t is required")
        if self.kind.is_transfer and not 0 <= self.frozen_prefix <= NUM_BLOCKS:
            raise ConfigurationError(f"frozen prefix L must be in [0, {NUM_BLOCKS}], got {self.frozen_prefix}")

    @classmethod
    def from_epsilons(
        cls,
        kind: StrategyKind,
        eps_s: Optional[float] = None,
        eps_t: Optional[float] = None,
        frozen_prefix: int = DEFAULT_FROZEN_PREFIX,
        p: float = PGD_NORM,
        iters: int = PGD_ITERS,
        return_mode: str = "last",
        step: Optional[float] = None,
        init: str = "random",
    ) -> "StrategySpec":
        """
        Build a spec from plain radii.

        eps^t defaults to eps^s, except for ST_AFT, whose target radius
        defaults to 0.05. Budgets are attached only to adversarial phases.
        """
        if eps_t is None:
            eps_t = ST_AFT_TARGET_EPSILON if kind is StrategyKind.ST_AFT else eps_s
        phases = get_phases(kind)

        def budget(eps: Optional[float], side: str) -> Optional[PerturbationBudget]:
            if eps is None or not any(plan.budget == side for plan in phases):
                return None
            return PerturbationBudget(epsilon=eps, p=p, iters=iters, step=step, init=init, return_mode=return_mode)

        return cls(
            kind=kind,
            source_budget=budget(eps_s, "source"),
            target_budget=budget(eps_t, "target"),
            frozen_prefix=frozen_prefix,
        )

    @property
    def phases(self) -> Tuple[PhasePlan, ...]:
        return get_phases(self.kind)

    @property
    def effective_frozen_prefix(self) -> int:
        """Non-transfer kinds train every layer; L is ignored for them."""
        return self.frozen_prefix if self.kind.is_transfer else 0

    def budget_for(self, plan: PhasePlan) -> Optional[PerturbationBudget]:
        if plan.budget == "source":
            return self.source_budget
        if plan.budget == "target":
            return self.target_budget
        return None

    @property
    def epsilon_s(self) -> Optional[float]:
        return None if self.source_budget is None else self.source_budget.epsilon

    @property
    def epsilon_t(self) -> Optional[float]:
        return None if self.target_budget is None else self.target_budget.epsilon

    def describe(self) -> Dict[str, Any]:
        return {
            "strategy": self.kind.value,
            "epsilon_s": self.epsilon_s,
            "epsilon_t": self.epsilon_t,
            "frozen_prefix": self.effective_frozen_prefix,
        }


# ---------------------------------------------------------------------------
# Run trace
# ---------------------------------------------------------------------------

TRACE_COLUMNS = ("phase", "domain", "adversarial", "epsilon", "L", "epochs", "final_loss", "final_acc")


@dataclass
class RunTrace:
    """Phase records of one run, in execution order."""

    kind: StrategyKind
    phases: List[PhaseRecord] = field(default_factory=list)

    def signature(self) -> List[Tuple[str, str, bool, Optional[float]]]:
        return [(r.phase, r.domain, r.adversarial, r.epsilon) for r in self.phases]

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "phase": r.phase,
                "domain": r.domain,
                "adversarial": "true" if r.adversarial else "false",
                "epsilon": "-" if r.epsilon is None else f"{r.epsilon:g}",
                "L": r.frozen_prefix,
                "epochs": r.epochs,
                "final_loss": f"{r.final_loss:.6f}",
                "final_acc": f"{r.final_acc:.6f}",
            }
            for r in self.phases
        ]
        return pd.DataFrame(rows, columns=list(TRACE_COLUMNS))

    def to_tsv(self) -> str:
        return self.to_frame().to_csv(sep="\t", index=False, lineterminator="\n")

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.to_tsv(), encoding="utf-8")
        except OSError as exc:
            raise PersistenceError(f"cannot write run trace {path}: {exc}") from exc
        return path

    @classmethod
    def read(cls, path: Union[str, Path], kind: StrategyKind) -> "RunTrace":
        frame = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False)
        phases = [
            PhaseRecord(
                phase=row["phase"],
                domain=row["domain"],
                adversarial=row["adversarial"] == "true",
                epsilon=None if row["epsilon"] == "-" else float(row["epsilon"]),
                frozen_prefix=int(row["L"]),
                epochs=int(row["epochs"]),
                final_loss=float(row["final_loss"]),
                final_acc=float(row["final_acc"]),
            )
            for _, row in frame.iterrows()
        ]
        return cls(kind=kind, phases=phases)


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

def _source_model(
    spec: StrategySpec,
    plan: PhasePlan,
    source_ds: Optional[Dataset],
    config: TrainConfig,
    widths: Sequence[int],
    cache: Optional[PretrainCache],
    source_model: Optional[MicroResNet],
) -> Tuple[MicroResNet, PhaseRecord]:
    budget = spec.budget_for(plan)
    kind = StrategyKind.AT if plan.adversarial else StrategyKind.ST
    if source_model is not None:
        phases = source_model.provenance.get("phases") or []
        if not phases:
            raise ConfigurationError("the supplied source model carries no training record")
        return source_model, PhaseRecord.from_dict(phases[0])
    if source_ds is None:
        raise ConfigurationError(f"strategy {spec.kind.value} needs a source dataset or a pre-trained source model")
    if cache is not None:
        model, record, _ = pretrain_cache(source_ds, kind, budget, config, cache=cache, widths=widths)
        return model, record
    return train_source_model(source_ds, kind, budget, config, widths)


def run_strategy(
    spec: StrategySpec,
    source_ds: Optional[Dataset],
    target_ds: Dataset,
    config: TrainConfig,
    cache: Optional[PretrainCache] = None,
    widths: Sequence[int] = DEFAULT_WIDTHS,
    source_model: Optional[MicroResNet] = None,
) -> Tuple[MicroResNet, RunTrace]:
    """
    Execute the phase sequence of ``spec.kind`` and return the target model.

    Transfer kinds take their source model from ``source_model`` when given,
    else from ``cache`` (training it on a miss), else train it here. The
    target phase then freezes ``spec.frozen_prefix`` blocks, re-draws the
    head for the target classes with ``config.seed`` and trains with
    ``config.lr_finetune``.

    Raises:
        ConfigurationError: missing datasets or budgets (before any training).
        DivergenceError: a phase diverged; ``exc.trace`` holds the phases
            completed so far.
    """
    if target_ds is None:
        raise ConfigurationError("every strategy needs a target dataset")
    trace = RunTrace(kind=spec.kind)
    plans = spec.phases
    logger.info("Running %s (eps^s=%s, eps^t=%s, L=%d)", spec.kind.value, spec.epsilon_s, spec.epsilon_t, spec.effective_frozen_prefix)

    try:
        if not spec.kind.is_transfer:
            (plan,) = plans
            model = build_model(widths, num_classes=target_ds.num_classes, seed=config.seed, mode=config.precision)
            model, record = train(
                model, target_ds, config, adversarial=spec.budget_for(plan), lr0=config.lr0,
                phase=plan.phase, domain=plan.domain,
            )
            trace.phases.append(record)
        else:
            source_plan, target_plan = plans
            if source_model is None and source_ds is None:
                raise ConfigurationError(f"strategy {spec.kind.value} needs a source dataset or a pre-trained source model")
            model, source_record = _source_model(spec, source_plan, source_ds, config, widths, cache, source_model)
            trace.phases.append(source_record)

            freeze_prefix(model, spec.frozen_prefix)
            replace_head(model, target_ds.num_classes, seed=config.seed)
            model, record = train(
                model, target_ds, config, adversarial=spec.budget_for(target_plan), lr0=config.lr_finetune,
                phase=target_plan.phase, domain=target_plan.domain,
            )
            trace.phases.append(record)
    except DivergenceError as exc:
        exc.trace = trace
        logger.error("%s diverged after %d completed phase(s): %s", spec.kind.value, len(trace.phases), exc)
        raise

    model.provenance = {
        **spec.describe(),
        "seed": config.seed,
        "source_seed": config.effective_source_seed if spec.kind.is_transfer else None,
        "train": config.describe(),
        "phases": [r.to_dict() for r in trace.phases],
    }
    return model, trace


def final_train_accuracy_ok(trace: RunTrace, floor: float) -> bool:
    """False when any phase ended below the train-accuracy floor (or on a NaN)."""
    return all(math.isfinite(r.final_acc) and r.final_acc >= floor for r in trace.phases)
