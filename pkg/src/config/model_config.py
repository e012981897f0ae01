"""
Model configuration for the adversarial transfer-learning toolkit.

This file defines:
- Label space (fill levels) and container transparency kinds
- The container catalog rendered by the synthetic target generator
- The three built-in shape-held-out splits
- The six-strategy lattice (phase sequence per strategy kind)
- Numeric defaults for the network, batchnorm, PGD and training

The goal is to keep all experiment "wiring" in one place so that
docs/model_overview.md matches this file.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Dict, FrozenSet, List, Optional, Tuple


# ---------------------------------------------------------------------------
# Image and network defaults
# ---------------------------------------------------------------------------

IMAGE_SIZE = 64
IMAGE_CHANNELS = 3

DEFAULT_WIDTHS: Tuple[int, int, int, int] = (16, 32, 64, 128)
NUM_BLOCKS = 4

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1


# ---------------------------------------------------------------------------
# Label space
# ---------------------------------------------------------------------------

class FillLevel(int, Enum):
    """Target label: filling level as a fraction of container capacity."""

    EMPTY = 0
    HALF = 1
    NINETY = 2
    UNKNOWN = 3

    @property
    def label(self) -> str:
        return {0: "0%", 1: "50%", 2: "90%", 3: "unknown"}[self.value]

    @property
    def fraction(self) -> Optional[float]:
        return {0: 0.0, 1: 0.5, 2: 0.9, 3: None}[self.value]


NUM_TARGET_CLASSES = len(FillLevel)


class Transparency(str, Enum):
    TRANSPARENT = "transparent"
    TRANSLUCENT = "translucent"
    OPAQUE = "opaque"


# Share of each fill class among samples of see-through containers. The
# unknown class comes from opaque containers only, so its 10% share is
# realised through the catalog rather than drawn here.
CLASS_IMBALANCE: Dict[FillLevel, float] = {
    FillLevel.EMPTY: 0.40,
    FillLevel.HALF: 0.25,
    FillLevel.NINETY: 0.25,
    FillLevel.UNKNOWN: 0.10,
}


# ---------------------------------------------------------------------------
# Container catalog
# ---------------------------------------------------------------------------

# A profile is a list of (h, r) knots: h in [0, 1] runs from the interior
# bottom to the rim, r is the interior half-width as a fraction of the
# image width. The radius is linearly interpolated between knots.
Profile = Tuple[Tuple[float, float], ...]


@dataclass(frozen=True)
class ContainerSpec:
    """Configuration for one container in the synthetic catalog."""
    container_id: str
    name: str
    shape_family: str
    category: str
    transparency: Transparency
    profile: Profile
    height: float
    stem: float = 0.0
    tint: Tuple[float, float, float] = (0.85, 0.9, 0.95)


CONTAINERS: Dict[str, ContainerSpec] = {
    # Stemmed -----------------------------------------------------------------
    "wine_glass": ContainerSpec(
        container_id="wine_glass",
        name="Wine glass",
        shape_family="stemmed_bowl",
        category="stemmed",
        transparency=Transparency.TRANSPARENT,
        profile=((0.0, 0.06), (0.35, 0.22), (0.75, 0.23), (1.0, 0.18)),
        height=0.82,
        stem=0.38,
    ),
    "cocktail_glass": ContainerSpec(
        container_id="cocktail_glass",
        name="Cocktail glass",
        shape_family="stemmed_cone",
        category="stemmed",
        transparency=Transparency.TRANSPARENT,
        profile=((0.0, 0.02), (1.0, 0.30)),
        height=0.78,
        stem=0.42,
    ),
    "port_glass": ContainerSpec(
        container_id="port_glass",
        name="Port glass",
        shape_family="stemmed_tulip",
        category="stemmed",
        transparency=Transparency.TRANSPARENT,
        profile=((0.0, 0.05), (0.5, 0.16), (1.0, 0.12)),
        height=0.74,
        stem=0.32,
        tint=(0.9, 0.88, 0.84),
    ),

    # Flute -------------------------------------------------------------------
    "champagne_flute": ContainerSpec(
        container_id="champagne_flute",
        name="Champagne flute",
        shape_family="flute",
        category="flute",
        transparency=Transparency.TRANSPARENT,
        profile=((0.0, 0.04), (0.2, 0.09), (1.0, 0.15)),
        height=0.88,
        stem=0.34,
    ),

    # Cups --------------------------------------------------------------------
    "beer_cup": ContainerSpec(
        container_id="beer_cup",
        name="Beer cup",
        shape_family="tall_cup",
        category="cup",
        transparency=Transparency.TRANSPARENT,
        profile=((0.0, 0.17), (1.0, 0.22)),
        height=0.8,
    ),
    "small_cup": ContainerSpec(
        container_id="small_cup",
        name="Small transparent cup",
        shape_family="short_cup",
        category="cup",
        transparency=Transparency.TRANSPARENT,
        profile=((0.0, 0.2), (1.0, 0.25)),
        height=0.55,
    ),
    "green_glass": ContainerSpec(
        container_id="green_glass",
        name="Green glass",
        shape_family="tapered_cup",
        category="cup",
        transparency=Transparency.TRANSLUCENT,
        profile=((0.0, 0.14), (0.5, 0.2), (1.0, 0.19)),
        height=0.7,
        tint=(0.45, 0.75, 0.45),
    ),

    # Opaque ------------------------------------------------------------------
    "red_cup": ContainerSpec(
        container_id="red_cup",
        name="Red cup",
        shape_family="opaque_cup",
        category="opaque",
        transparency=Transparency.OPAQUE,
        profile=((0.0, 0.16), (1.0, 0.23)),
        height=0.72,
        tint=(0.8, 0.12, 0.12),
    ),
    "white_cup": ContainerSpec(
        container_id="white_cup",
        name="White mug",
        shape_family="opaque_mug",
        category="opaque",
        transparency=Transparency.OPAQUE,
        profile=((0.0, 0.2), (1.0, 0.2)),
        height=0.6,
        tint=(0.93, 0.93, 0.9),
    ),
}


def get_container(container_id: str) -> ContainerSpec:
    """Get configuration for a single container."""
    return CONTAINERS[container_id]


def families_in_catalog(catalog: Optional[Dict[str, ContainerSpec]] = None) -> List[str]:
    """Return the shape families present in the catalog, in catalog order."""
    catalog = CONTAINERS if catalog is None else catalog
    seen: List[str] = []
    for spec in catalog.values():
        if spec.shape_family not in seen:
            seen.append(spec.shape_family)
    return seen


def containers_in_families(
    families: FrozenSet[str],
    catalog: Optional[Dict[str, ContainerSpec]] = None,
) -> List[str]:
    """Container ids whose shape family is in ``families``."""
    catalog = CONTAINERS if catalog is None else catalog
    return [cid for cid, spec in catalog.items() if spec.shape_family in families]


# ---------------------------------------------------------------------------
# Built-in splits
# ---------------------------------------------------------------------------

# Each split lists the shape families that appear only in the test set.
BUILTIN_SPLITS: Dict[str, FrozenSet[str]] = {
    # flute, beer-cup and cocktail analogs unseen at train time
    "s1": frozenset({"flute", "tall_cup", "stemmed_cone"}),
    # beer cup swapped with the wine glass
    "s2": frozenset({"flute", "stemmed_bowl", "stemmed_cone"}),
    # every stemmed container trains, only unstemmed cups test
    "s3": frozenset({"opaque_cup", "tapered_cup", "tall_cup"}),
}

FLUTE_HELD_OUT_SPLIT = "s1"

SAMPLES_PER_CONTAINER = 400
SOURCE_NUM_CLASSES = 10
SOURCE_TO_TARGET_MIN_RATIO = 10


# ---------------------------------------------------------------------------
# Attack and training defaults
# ---------------------------------------------------------------------------

PGD_NORM = 2.0
PGD_ITERS = 10
PGD_STEP_FACTOR = 2.5

EPOCHS = 30
LR_DIRECT = 0.1
LR_FINETUNE = 0.005
BATCH_SIZE = 32

DEFAULT_FROZEN_PREFIX = 1
ST_AFT_TARGET_EPSILON = 0.05

L_GRID: Tuple[int, ...] = (0, 1, 2, 3, 4)
EPSILON_GRID: Tuple[float, ...] = (0.01, 0.05, 0.1, 0.5, 1.0)
DEFAULT_SEEDS: Tuple[int, ...] = (0, 1, 2, 3, 4)

# Phases whose final train accuracy stays below this are flagged as
# not converged in comparison reports.
CONVERGENCE_FLOOR = 0.5


# ---------------------------------------------------------------------------
# Strategy lattice
# ---------------------------------------------------------------------------

class StrategyKind(str, Enum):
    ST = "ST"
    AT = "AT"
    ST_FT = "ST_FT"
    ST_AFT = "ST_AFT"
    AT_FT = "AT_FT"
    AT_AFT = "AT_AFT"

    @property
    def cli_name(self) -> str:
        return self.value.lower().replace("_", "-")

    @classmethod
    def parse(cls, text: str) -> "StrategyKind":
        key = text.strip().upper().replace("-", "_").replace("→", "_")
        return cls(key)

    @property
    def is_transfer(self) -> bool:
        return self in (StrategyKind.ST_FT, StrategyKind.ST_AFT, StrategyKind.AT_FT, StrategyKind.AT_AFT)


@dataclass(frozen=True)
class PhasePlan:
    """One step of a strategy: where it trains and whether inputs are attacked."""
    phase: str
    domain: str
    adversarial: bool
    budget: Optional[str]  # "source" / "target" / None


STRATEGY_PHASES: Dict[StrategyKind, Tuple[PhasePlan, ...]] = {
    StrategyKind.ST: (PhasePlan("Train", "target", False, None),),
    StrategyKind.AT: (PhasePlan("AdvTrain", "target", True, "target"),),
    StrategyKind.ST_FT: (
        PhasePlan("Train", "source", False, None),
        PhasePlan("Finetune", "target", False, None),
    ),
    StrategyKind.ST_AFT: (
        PhasePlan("Train", "source", False, None),
        PhasePlan("AdvFinetune", "target", True, "target"),
    ),
    StrategyKind.AT_FT: (
        PhasePlan("AdvTrain", "source", True, "source"),
        PhasePlan("Finetune", "target", False, None),
    ),
    StrategyKind.AT_AFT: (
        PhasePlan("AdvTrain", "source", True, "source"),
        PhasePlan("AdvFinetune", "target", True, "target"),
    ),
}


def get_phases(kind: StrategyKind) -> Tuple[PhasePlan, ...]:
    """Return the phase sequence for a strategy kind."""
    return STRATEGY_PHASES[kind]


def list_strategy_kinds() -> List[StrategyKind]:
    """All six kinds in reporting order."""
    return list(StrategyKind)
