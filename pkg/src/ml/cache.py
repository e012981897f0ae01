"""
On-disk cache of source-domain models.

A transfer strategy's source phase depends only on the source data, the
source kind (clean or adversarial), eps^s, the source seed and the
training settings, so sweeps that vary the target side reuse one
checkpoint per (kind, eps^s, seed). The stored provenance records the full
recipe; finding an entry under the same key with a different recipe is an
error, not a silent overwrite.

Entries are written atomically, so readers never need a lock. Writers take
an exclusive per-key lock file before training.
"""

from __future__ import annotations

import contextlib
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Sequence, Tuple, Union

from src.attack import PerturbationBudget
from src.config.model_config import DEFAULT_WIDTHS, StrategyKind
from src.datasets import Dataset
from src.errors import CacheCollisionError, ConfigurationError, PersistenceError
from src.ml.train_models import PhaseRecord, TrainConfig, train
from src.model import MicroResNet, build_model, load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

CACHE_ENV_VAR = "ADVXFER_CACHE"
DEFAULT_CACHE_DIR = Path("outputs") / "cache"
LOCK_TIMEOUT_S = 6 * 3600.0
_POLL_S = 0.5


def resolve_cache_dir(configured: Optional[Union[str, os.PathLike]] = None) -> Path:
    """ADVXFER_CACHE wins over the configured directory, which wins over the default."""
    env = os.environ.get(CACHE_ENV_VAR)
    if env:
        return Path(env)
    return Path(configured) if configured else DEFAULT_CACHE_DIR


def cache_key(kind: StrategyKind, epsilon: Optional[float], seed: int) -> str:
    if kind is StrategyKind.ST:
        return f"ST_seed{seed}"
    return f"AT_eps{epsilon:.6g}_seed{seed}"


@dataclass
class PretrainCache:
    root: Path
    hits: int = 0
    misses: int = 0

    @classmethod
    def open(cls, configured: Optional[Union[str, os.PathLike]] = None) -> "PretrainCache":
        root = resolve_cache_dir(configured)
        try:
            root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise PersistenceError(f"cannot create cache directory {root}: {exc}") from exc
        return cls(root=root)

    def path_for(self, key: str) -> Path:
        return self.root / f"{key}.mrv"

    def lookup(self, key: str, expected: Dict[str, Any]) -> Optional[MicroResNet]:
        path = self.path_for(key)
        if not path.exists():
            return None
        model = load_checkpoint(path)
        stored = model.provenance
        clashes = sorted(k for k, v in expected.items() if stored.get(k) != v)
        if clashes:
            details = ", ".join(f"{k}: cached={stored.get(k)!r} requested={expected[k]!r}" for k in clashes)
            raise CacheCollisionError(f"cache entry {path} was trained with a different recipe ({details})")
        return model

    @contextlib.contextmanager
    def lock(self, key: str, timeout: float = LOCK_TIMEOUT_S) -> Iterator[None]:
        lock_path = self.root / f"{key}.lock"
        deadline = time.monotonic() + timeout
        while True:
            try:
                fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                break
            except FileExistsError:
                if time.monotonic() > deadline:
                    raise PersistenceError(f"timed out waiting for cache lock {lock_path}")
                time.sleep(_POLL_S)
            except OSError as exc:
                raise PersistenceError(f"cannot create cache lock {lock_path}: {exc}") from exc
        try:
            os.write(fd, str(os.getpid()).encode("ascii"))
            os.close(fd)
            yield
        finally:
            with contextlib.suppress(FileNotFoundError):
                lock_path.unlink()


def source_recipe(
    source_ds: Dataset,
    kind: StrategyKind,
    budget: Optional[PerturbationBudget],
    config: TrainConfig,
    widths: Sequence[int],
) -> Dict[str, Any]:
    """Everything the source model depends on, as stored in its provenance."""
    return {
        "role": "source",
        "source_kind": kind.value,
        "epsilon_s": None if budget is None else budget.epsilon,
        "attack": None if budget is None else budget.describe(),
        "seed": config.effective_source_seed,
        "widths": [int(w) for w in widths],
        "epochs": config.epochs,
        "lr0": config.lr0,
        "batch_size": config.batch_size,
        "precision": config.precision.value,
        "weight_decay": config.weight_decay,
        "momentum": config.momentum,
        "source_data": source_ds.fingerprint(),
    }


def train_source_model(
    source_ds: Dataset,
    kind: StrategyKind,
    budget: Optional[PerturbationBudget],
    config: TrainConfig,
    widths: Sequence[int] = DEFAULT_WIDTHS,
    recipe: Optional[Dict[str, Any]] = None,
) -> Tuple[MicroResNet, PhaseRecord]:
    seed = config.effective_source_seed
    model = build_model(widths, num_classes=source_ds.num_classes, seed=seed, mode=config.precision)
    model, record = train(
        model,
        source_ds,
        config,
        adversarial=budget,
        lr0=config.lr0,
        phase="AdvTrain" if budget is not None else "Train",
        domain="source",
        seed=seed,
    )
    recipe = recipe if recipe is not None else source_recipe(source_ds, kind, budget, config, widths)
    model.provenance = {**recipe, "phases": [record.to_dict()]}
    return model, record


def pretrain_cache(
    source_ds: Dataset,
    kind: StrategyKind,
    budget: Optional[PerturbationBudget],
    config: TrainConfig,
    cache: Optional[PretrainCache] = None,
    widths: Sequence[int] = DEFAULT_WIDTHS,
) -> Tuple[MicroResNet, PhaseRecord, Path]:
    """
    Return the source model for (kind, eps^s, seed), training it on a miss.

    ``kind`` is ST (clean source training) or AT (adversarial, ``budget``
    required). A hit loads the checkpoint and trains nothing.

    Raises:
        CacheCollisionError: an entry exists under the key with a different
            recipe (for instance a different eps^s that formats identically).
    """
    if kind not in (StrategyKind.ST, StrategyKind.AT):
        raise ConfigurationError(f"source models are trained with ST or AT, not {kind.value}")
    if kind is StrategyKind.AT and budget is None:
        raise ConfigurationError("adversarial source training needs eps^s")
    if kind is StrategyKind.ST:
        budget = None

    cache = cache if cache is not None else PretrainCache.open()
    key = cache_key(kind, None if budget is None else budget.epsilon, config.effective_source_seed)
    recipe = source_recipe(source_ds, kind, budget, config, widths)

    model = cache.lookup(key, recipe)
    if model is None:
        with cache.lock(key):
            # another writer may have finished while we waited for the lock
            model = cache.lookup(key, recipe)
            if model is None:
                cache.misses += 1
                logger.info("Cache miss %s: training source model", key)
                model, record = train_source_model(source_ds, kind, budget, config, widths, recipe=recipe)
                save_checkpoint(model, cache.path_for(key))
                return model, record, cache.path_for(key)

    cache.hits += 1
    logger.info("Cache hit %s (%s)", key, cache.path_for(key))
    record = PhaseRecord.from_dict(model.provenance["phases"][0])
    return model, record, cache.path_for(key)
