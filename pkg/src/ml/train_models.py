"""
Minibatch SGD trainer shared by every strategy phase.

One call to `train` is one phase: E epochs of class-balanced minibatches,
optionally replacing each batch by its PGD perturbation before the loss,
with the learning rate decaying linearly per epoch. There is no early
stopping; the model after the last epoch is returned.

This file defines:
- TrainConfig: optimizer / schedule settings for a run
- PhaseRecord: what one phase did and where it ended
- train(): the phase loop
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
from tqdm import tqdm

from src.attack import PerturbationBudget, pgd_perturb
from src.config.model_config import BATCH_SIZE, EPOCHS, LR_DIRECT, LR_FINETUNE
from src.datasets import Dataset
from src.errors import ConfigurationError, DivergenceError
from src.ml.sampler import make_balanced_sampler
from src.ml.schedule import lr_at, sgd_step
from src.tensor import ScalarMode, Tensor, backward, softmax_cross_entropy

logger = logging.getLogger(__name__)

# SeedSequence tags separating the sampler stream from the attack stream.
_SAMPLER_STREAM = 0
_ATTACK_STREAM = 1


# ---------------------------------------------------------------------------
# Configuration and records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    """
    Settings shared by all phases of one run.

    ``lr0`` applies to phases that train from scratch, ``lr_finetune`` to the
    target phase of transfer strategies. ``source_seed`` (defaults to
    ``seed``) seeds source-domain training, so a cached source model can be
    shared by runs that differ only in their target seed.
    """

    epochs: int = EPOCHS
    lr0: float = LR_DIRECT
    lr_finetune: float = LR_FINETUNE
    batch_size: int = BATCH_SIZE
    seed: int = 0
    source_seed: Optional[int] = None
    precision: ScalarMode = ScalarMode.SINGLE
    weight_decay: float = 0.0
    momentum: float = 0.0
    progress: bool = False

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        for name in ("lr0", "lr_finetune"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ConfigurationError(f"{name} must be > 0, got {value}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise ConfigurationError("weight_decay must be >= 0 and momentum in [0, 1)")

    @property
    def effective_source_seed(self) -> int:
        return self.seed if self.source_seed is None else self.source_seed

    def describe(self) -> Dict[str, Any]:
        record = asdict(self)
        record["precision"] = self.precision.value
        return record


@dataclass
class PhaseRecord:
    phase: str
    domain: str
    adversarial: bool
    epsilon: Optional[float]
    frozen_prefix: int
    epochs: int
    final_loss: float
    final_acc: float
    lr0: float = 0.0
    history: list = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, record: Dict[str, Any]) -> "PhaseRecord":
        return cls(**record)


# ---------------------------------------------------------------------------
# Phase loop
# ---------------------------------------------------------------------------

def _batch_seed(seed: int, epoch: int, batch: int) -> int:
    return int(np.random.SeedSequence([int(seed), _ATTACK_STREAM, epoch, batch]).generate_state(1)[0])


def train(
    model: Any,
    dataset: Dataset,
    config: TrainConfig,
    adversarial: Optional[PerturbationBudget] = None,
    lr0: Optional[float] = None,
    phase: str = "Train",
    domain: str = "target",
    seed: Optional[int] = None,
) -> Tuple[Any, PhaseRecord]:
    """
    Run one training phase in place.

    Args:
        model: MicroResNet or LinearClassifier; its head must match the
            dataset's class count. Frozen tensors are left untouched.
        dataset: training samples.
        config: epochs, batch size, precision and optimizer hooks.
        adversarial: when given, every batch is replaced by its PGD
            perturbation against the current model before the loss.
        lr0: starting learning rate (defaults to ``config.lr0``).
        phase, domain: labels for the returned record.
        seed: sampler / attack seed (defaults to ``config.seed``).

    Returns:
        (model, PhaseRecord) where the record's final loss and accuracy are
        averaged over the batches of the last epoch.

    Raises:
        ConfigurationError: class-count mismatch or an unusable label set.
        DivergenceError: the loss or a gradient became non-finite.
    """
    if dataset.num_classes != model.num_classes:
        raise ConfigurationError(
            f"dataset has {dataset.num_classes} classes but the model head has {model.num_classes}"
        )
    if len(dataset) == 0:
        raise ConfigurationError(f"{domain} dataset is empty")
    lr0 = config.lr0 if lr0 is None else lr0
    seed = config.seed if seed is None else seed
    dtype = model.mode.dtype

    sampler = make_balanced_sampler(
        dataset.labels,
        seed=np.random.SeedSequence([int(seed), _SAMPLER_STREAM]),
        num_classes=model.num_classes,
    )
    labels = dataset.labels
    steps = math.ceil(len(dataset) / config.batch_size)
    velocity: Dict[str, np.ndarray] = {}
    history = []
    epsilon = None if adversarial is None else adversarial.epsilon

    logger.info(
        "%s on %s: %d samples, %d epochs x %d steps, lr0=%g%s",
        phase, domain, len(dataset), config.epochs, steps, lr0,
        "" if adversarial is None else f", PGD eps={adversarial.epsilon:g}",
    )

    epoch_loss, epoch_acc = float("nan"), float("nan")
    for epoch in tqdm(range(config.epochs), desc=f"{phase}/{domain}", disable=not config.progress):
        lr = lr_at(lr0, epoch, config.epochs)
        loss_sum, correct, seen = 0.0, 0, 0
        for step in range(steps):
            idx = sampler.draw(config.batch_size)
            x = dataset.batch(idx, dtype=dtype)
            y = labels[idx]
            if adversarial is not None:
                x = pgd_perturb(model, x, y, adversarial, seed=_batch_seed(seed, epoch, step))

            model.zero_grad()
            logits = model.forward(Tensor(x), training=True)
            loss = softmax_cross_entropy(logits, y)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(f"{phase}/{domain}: loss became {value} at epoch {epoch}, step {step}")
            trainable = model.trainable_parameters()
            backward(loss, wrt=list(trainable.values()))
            try:
                sgd_step(trainable, lr, weight_decay=config.weight_decay, momentum=config.momentum, velocity=velocity)
            except DivergenceError as exc:
                raise DivergenceError(f"{phase}/{domain} epoch {epoch}, step {step}: {exc}") from exc

            loss_sum += value * len(y)
            correct += int((np.argmax(logits.data, axis=1) == y).sum())
            seen += len(y)
            logger.debug("%s epoch %d step %d loss %.5f", phase, epoch, step, value)

        epoch_loss, epoch_acc = loss_sum / seen, correct / seen
        history.append({"epoch": epoch, "lr": lr, "loss": epoch_loss, "acc": epoch_acc})
        logger.info("%s epoch %d/%d lr=%.5g loss=%.4f acc=%.4f", phase, epoch + 1, config.epochs, lr, epoch_loss, epoch_acc)

    model.zero_grad()
    record = PhaseRecord(
        phase=phase,
        domain=domain,
        adversarial=adversarial is not None,
        epsilon=epsilon,
        frozen_prefix=int(getattr(model, "frozen_prefix", 0)),
        epochs=config.epochs,
        final_loss=epoch_loss,
        final_acc=epoch_acc,
        lr0=lr0,
        history=history,
    )
    return model, record
