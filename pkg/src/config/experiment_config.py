"""
Run configuration for experiments.

This file defines:
- AttackConfig / ModelConfig / DataConfig: the PGD, network and dataset knobs
- ExperimentConfig: one experiment (split, strategy, radii, seeds, outputs)
  nesting the above plus the trainer's TrainConfig
- INI parsing (`load_config`, `parse_config_text`) and the inverse
  `ExperimentConfig.to_ini`, used to persist the resolved configuration
  next to every output

Config files are line-oriented `key = value` pairs under `[section]`
headers. Any section or key not listed in CONFIG_SCHEMA is an error.
Example:

    [experiment]
    split = s1
    strategy = at-ft
    eps_s = 0.1
    seeds = 0..4

    [train]
    epochs = 30
"""

from __future__ import annotations

import configparser
import io
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, Union

from src.attack import PerturbationBudget
from src.config.model_config import (
    BUILTIN_SPLITS,
    CONVERGENCE_FLOOR,
    DEFAULT_FROZEN_PREFIX,
    DEFAULT_SEEDS,
    DEFAULT_WIDTHS,
    IMAGE_SIZE,
    PGD_ITERS,
    PGD_NORM,
    SAMPLES_PER_CONTAINER,
    SOURCE_NUM_CLASSES,
    SOURCE_TO_TARGET_MIN_RATIO,
    StrategyKind,
)
from src.datasets import SplitConfig
from src.errors import ConfigurationError, PersistenceError
from src.ml.strategies import StrategySpec
from src.ml.train_models import TrainConfig
from src.tensor import ScalarMode

PathLike = Union[str, os.PathLike]


# ---------------------------------------------------------------------------
# Value parsers
# ---------------------------------------------------------------------------

def parse_seeds(text: str) -> Tuple[int, ...]:
    """'0..4' (inclusive range) or '0,2,7'."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = (int(part) for part in text.split("..", 1))
            if hi < lo:
                raise ConfigurationError(f"empty seed range {text!r}")
            return tuple(range(lo, hi + 1))
        seeds = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse seeds {text!r}: use N..M or a comma list") from exc
    if not seeds:
        raise ConfigurationError("seed list is empty")
    return seeds


def format_seeds(seeds: Tuple[int, ...]) -> str:
    if len(seeds) > 1 and seeds == tuple(range(seeds[0], seeds[-1] + 1)):
        return f"{seeds[0]}..{seeds[-1]}"
    return ",".join(str(s) for s in seeds)


def _optional(parse: Callable[[str], Any]) -> Callable[[str], Any]:
    def inner(text: str) -> Any:
        return None if text.strip().lower() in ("", "none") else parse(text)
    return inner


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _norm(text: str) -> float:
    value = text.strip().lower()
    if value in ("inf", "linf"):
        return math.inf
    if value in ("2", "l2", "2.0"):
        return 2.0
    raise ValueError(f"norm must be 2 or inf, got {text!r}")


def _widths(text: str) -> Tuple[int, ...]:
    return tuple(int(part) for part in text.split(","))


def _split(text: str) -> str:
    key = text.strip().lower()
    if key not in BUILTIN_SPLITS:
        raise ValueError(f"unknown split {text!r}; built-in splits: {sorted(BUILTIN_SPLITS)}")
    return key


# ---------------------------------------------------------------------------
# Config dataclasses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttackConfig:
    p: float = PGD_NORM
    iters: int = PGD_ITERS
    step: Optional[float] = None
    init: str = "random"
    return_mode: str = "last"

    def budget(self, epsilon: float) -> PerturbationBudget:
        return PerturbationBudget(
            epsilon=epsilon, p=self.p, iters=self.iters, step=self.step, init=self.init, return_mode=self.return_mode
        )


@dataclass(frozen=True)
class ModelConfig:
    widths: Tuple[int, ...] = DEFAULT_WIDTHS


@dataclass(frozen=True)
class DataConfig:
    """Where datasets come from. Without ``root`` they are generated in memory."""

    root: Optional[str] = None
    image_size: int = IMAGE_SIZE
    samples_per_container: int = SAMPLES_PER_CONTAINER
    test_samples_per_container: Optional[int] = None
    source_size: Optional[int] = None
    source_classes: int = SOURCE_NUM_CLASSES
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    split_id: str = "s1"
    strategy: StrategyKind = StrategyKind.ST_FT
    frozen_prefix: int = DEFAULT_FROZEN_PREFIX
    eps_s: Optional[float] = None
    eps_t: Optional[float] = None
    seeds: Tuple[int, ...] = DEFAULT_SEEDS
    out_dir: str = "outputs"
    jobs: int = 1
    cache_dir: Optional[str] = None
    convergence_floor: float = CONVERGENCE_FLOOR
    train: TrainConfig = field(default_factory=TrainConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> "ExperimentConfig":
        """Check everything a run needs before any data or training is touched."""
        _split(self.split_id)
        if self.jobs < 1:
            raise ConfigurationError(f"jobs must be >= 1, got {self.jobs}")
        if not self.seeds:
            raise ConfigurationError("seed list is empty")
        if len(self.model.widths) != len(DEFAULT_WIDTHS) or any(w < 1 for w in self.model.widths):
            raise ConfigurationError(f"widths must be {len(DEFAULT_WIDTHS)} positive ints, got {self.model.widths}")
        if not 0.0 <= self.convergence_floor <= 1.0:
            raise ConfigurationError(f"convergence_floor must be in [0, 1], got {self.convergence_floor}")
        self.attack.budget(1.0)
        self.strategy_spec()
        self.split_config()
        return self

    def strategy_spec(self, kind: Optional[StrategyKind] = None, **overrides: Any) -> StrategySpec:
        """StrategySpec for ``kind`` (default: the configured one) from the configured radii."""
        params = {"eps_s": self.eps_s, "eps_t": self.eps_t, "frozen_prefix": self.frozen_prefix}
        params.update(overrides)
        return StrategySpec.from_epsilons(
            kind or self.strategy,
            p=self.attack.p,
            iters=self.attack.iters,
            return_mode=self.attack.return_mode,
            step=self.attack.step,
            init=self.attack.init,
            **params,
        )

    def split_config(self) -> SplitConfig:
        return SplitConfig.builtin(
            self.split_id,
            samples_per_container=self.data.samples_per_container,
            test_samples_per_container=self.data.test_samples_per_container,
            image_size=self.data.image_size,
        )

    def source_size(self, target_train_size: int) -> int:
        if self.data.source_size is not None:
            return self.data.source_size
        return SOURCE_TO_TARGET_MIN_RATIO * target_train_size

    def train_config(self, seed: int) -> TrainConfig:
        return replace(self.train, seed=seed)

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        """Copy with non-None overrides applied (CLI flags win over file values)."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **changes).validate()

    # -- INI round trip ----------------------------------------------------

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        for section, (obj, keys) in self._sections().items():
            parser[section] = {
                key: format_seeds(self.seeds) if attr == "seeds" else _format_value(getattr(obj, attr))
                for key, attr in keys.items()
            }
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def write_resolved(self, out_dir: PathLike, name: str = "resolved_config.ini") -> Path:
        path = Path(out_dir) / name
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.to_ini(), encoding="utf-8")
        except OSError as exc:
            raise PersistenceError(f"cannot write resolved config {path}: {exc}") from exc
        return path

    def _sections(self) -> Dict[str, Tuple[Any, Dict[str, str]]]:
        return {
            section: (self if obj_attr is None else getattr(self, obj_attr), {k: spec[0] for k, spec in keys.items()})
            for section, (obj_attr, keys) in CONFIG_SCHEMA.items()
        }


def _format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, StrategyKind):
        return value.cli_name
    if isinstance(value, ScalarMode):
        return value.value
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


# section -> (attribute on ExperimentConfig holding the section object or
# None for top level, {ini key: (dataclass field, parser)})
CONFIG_SCHEMA: Dict[str, Tuple[Optional[str], Dict[str, Tuple[str, Callable[[str], Any]]]]] = {
    "experiment": (None, {
        "split": ("split_id", _split),
        "strategy": ("strategy", StrategyKind.parse),
        "l": ("frozen_prefix", int),
        "eps_s": ("eps_s", _optional(float)),
        "eps_t": ("eps_t", _optional(float)),
        "seeds": ("seeds", parse_seeds),
        "out": ("out_dir", str),
        "jobs": ("jobs", int),
        "cache_dir": ("cache_dir", _optional(str)),
        "convergence_floor": ("convergence_floor", float),
    }),
    "train": ("train", {
        "epochs": ("epochs", int),
        "lr0": ("lr0", float),
        "lr_finetune": ("lr_finetune", float),
        "batch_size": ("batch_size", int),
        "source_seed": ("source_seed", _optional(int)),
        "precision": ("precision", ScalarMode),
        "weight_decay": ("weight_decay", float),
        "momentum": ("momentum", float),
        "progress": ("progress", _bool),
    }),
    "attack": ("attack", {
        "norm": ("p", _norm),
        "iters": ("iters", int),
        "step": ("step", _optional(float)),
        "init": ("init", str),
        "return_mode": ("return_mode", str),
    }),
    "model": ("model", {
        "widths": ("widths", _widths),
    }),
    "data": ("data", {
        "root": ("root", _optional(str)),
        "image_size": ("image_size", int),
        "samples_per_container": ("samples_per_container", int),
        "test_samples_per_container": ("test_samples_per_container", _optional(int)),
        "source_size": ("source_size", _optional(int)),
        "source_classes": ("source_classes", int),
        "seed": ("seed", int),
    }),
}


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def parse_config_text(text: str, origin: str = "<config>") -> ExperimentConfig:
    """
    Parse INI text into a validated ExperimentConfig.

    Raises:
        ConfigurationError: syntax errors, unknown sections or keys, values
            that do not parse, or a combination that cannot run.
    """
    parser = configparser.ConfigParser(interpolation=None, strict=True, default_section="__defaults__")
    try:
        parser.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ConfigurationError(f"{origin}: {exc}") from exc

    unknown_sections = sorted(set(parser.sections()) - set(CONFIG_SCHEMA))
    if unknown_sections:
        raise ConfigurationError(f"{origin}: unknown section(s) {unknown_sections}; known: {sorted(CONFIG_SCHEMA)}")

    top: Dict[str, Any] = {}
    nested: Dict[str, Dict[str, Any]] = {}
    for section in parser.sections():
        attr, keys = CONFIG_SCHEMA[section]
        values: Dict[str, Any] = {}
        for key, raw in parser.items(section):
            if key not in keys:
                raise ConfigurationError(f"{origin}: unknown key {key!r} in [{section}]; known: {sorted(keys)}")
            field_name, parse = keys[key]
            try:
                values[field_name] = parse(raw)
            except (ValueError, ConfigurationError) as exc:
                raise ConfigurationError(f"{origin}: [{section}] {key} = {raw!r}: {exc}") from exc
        if attr is None:
            top.update(values)
        else:
            nested[attr] = values

    base = ExperimentConfig()
    sub = {attr: replace(getattr(base, attr), **values) for attr, values in nested.items()}
    return replace(base, **top, **sub).validate()


def load_config(path: Optional[PathLike] = None) -> ExperimentConfig:
    """Defaults when ``path`` is None, else the parsed file."""
    if path is None:
        return ExperimentConfig().validate()
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), origin=str(path))


def config_fields() -> Dict[str, Tuple[str, ...]]:
    """Dataclass field names per section, for documentation and tests."""
    return {
        "train": tuple(f.name for f in fields(TrainConfig)),
        "attack": tuple(f.name for f in fields(AttackConfig)),
        "model": tuple(f.name for f in fields(ModelConfig)),
        "data": tuple(f.name for f in fields(DataConfig)),
    }
