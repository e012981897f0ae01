"""
MicroResNet: a four-block residual classifier with a freezable prefix.

Layout (NCHW, widths w1..w4):

    stem    conv3x3(C_in -> w1) + BN + ReLU
    block1  residual unit w1 -> w1, stride 1
    block2  residual unit w1 -> w2, stride 2 (projection shortcut)
    block3  residual unit w2 -> w3, stride 2 (projection shortcut)
    block4  residual unit w3 -> w4, stride 2 (projection shortcut)
    head    global average pool + linear(w4 -> K)

Freezing a prefix of L blocks also freezes the stem (for L >= 1). Frozen
parts get no gradient and run batchnorm in eval mode, so their running
statistics never move.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.config.model_config import DEFAULT_WIDTHS, IMAGE_CHANNELS, NUM_BLOCKS
from src.errors import ConfigurationError, DimensionError
from src.tensor import (
    RunningStats,
    ScalarMode,
    Tensor,
    batchnorm2d,
    conv2d,
    global_avg_pool,
    linear,
    relu,
    residual_add,
)

logger = logging.getLogger(__name__)

# Seed-stream tags, so that the head can be re-drawn without touching the
# backbone stream.
_BACKBONE_STREAM = 0
_HEAD_STREAM = 1


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream]))


def _he_normal(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, mode: ScalarMode) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(mode.dtype)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

@dataclass
class BatchNormLayer:
    gamma: Tensor
    beta: Tensor
    stats: RunningStats

    @classmethod
    def create(cls, channels: int, mode: ScalarMode) -> "BatchNormLayer":
        return cls(
            gamma=Tensor(np.ones(channels, dtype=mode.dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype=mode.dtype), requires_grad=True),
            stats=RunningStats.fresh(channels, mode.dtype),
        )

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        return batchnorm2d(x, self.gamma, self.beta, self.stats, mode=mode)

    def parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta

    def buffers(self, prefix: str) -> Iterator[Tuple[str, np.ndarray]]:
        yield f"{prefix}.running_mean", self.stats.mean
        yield f"{prefix}.running_var", self.stats.var


@dataclass
class ConvBN:
    weight: Tensor
    bn: BatchNormLayer
    stride: int = 1
    pad: int = 1

    @classmethod
    def create(
        cls, rng: np.random.Generator, c_in: int, c_out: int, k: int, stride: int, mode: ScalarMode
    ) -> "ConvBN":
        weight = Tensor(_he_normal(rng, (c_out, c_in, k, k), c_in * k * k, mode), requires_grad=True)
        return cls(weight=weight, bn=BatchNormLayer.create(c_out, mode), stride=stride, pad=k // 2)

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        return self.bn(conv2d(x, self.weight, stride=self.stride, pad=self.pad), mode)

    def parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        yield f"{prefix}.weight", self.weight
        yield from self.bn.parameters(f"{prefix}.bn")

    def buffers(self, prefix: str) -> Iterator[Tuple[str, np.ndarray]]:
        yield from self.bn.buffers(f"{prefix}.bn")


@dataclass
class ResidualBlock:
    """Two conv-bn pairs plus identity or 1x1 projection shortcut."""

    conv1: ConvBN
    conv2: ConvBN
    shortcut: Optional[ConvBN] = None
    frozen: bool = False

    @classmethod
    def create(cls, rng: np.random.Generator, c_in: int, c_out: int, stride: int, mode: ScalarMode) -> "ResidualBlock":
        conv1 = ConvBN.create(rng, c_in, c_out, 3, stride, mode)
        conv2 = ConvBN.create(rng, c_out, c_out, 3, 1, mode)
        shortcut = None
        if stride != 1 or c_in != c_out:
            shortcut = ConvBN.create(rng, c_in, c_out, 1, stride, mode)
        return cls(conv1=conv1, conv2=conv2, shortcut=shortcut)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        mode = "train" if training and not self.frozen else "eval"
        out = relu(self.conv1(x, mode))
        out = self.conv2(out, mode)
        skip = x if self.shortcut is None else self.shortcut(x, mode)
        if skip.shape != out.shape:
            raise DimensionError("residual block", f"shortcut {skip.dims} vs body {out.dims}", axes=("shortcut",))
        return relu(residual_add(out, skip))

    def _parts(self) -> List[Tuple[str, ConvBN]]:
        parts = [("conv1", self.conv1), ("conv2", self.conv2)]
        if self.shortcut is not None:
            parts.append(("shortcut", self.shortcut))
        return parts

    def parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        for name, part in self._parts():
            yield from part.parameters(f"{prefix}.{name}")

    def buffers(self, prefix: str) -> Iterator[Tuple[str, np.ndarray]]:
        for name, part in self._parts():
            yield from part.buffers(f"{prefix}.{name}")


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

@dataclass
class MicroResNet:
    """Residual classifier f_theta; see module docstring for the layout."""

    widths: Tuple[int, ...]
    num_classes: int
    in_channels: int
    mode: ScalarMode
    stem: ConvBN
    blocks: List[ResidualBlock]
    head_weight: Tensor
    head_bias: Tensor
    stem_frozen: bool = False
    frozen_prefix: int = 0
    # training provenance carried into checkpoints (strategy, phases, seed, epsilon)
    provenance: Dict[str, object] = field(default_factory=dict)

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        if x.data.ndim != 4 or x.shape[1] != self.in_channels:
            raise DimensionError(
                "MicroResNet", f"expected N x {self.in_channels} x H x W input, got {x.dims}", axes=("input.C",)
            )
        stem_mode = "train" if training and not self.stem_frozen else "eval"
        out = relu(self.stem(x, stem_mode))
        for block in self.blocks:
            out = block.forward(out, training)
        return linear(global_avg_pool(out), self.head_weight, self.head_bias)

    __call__ = forward

    # -- parameter views --------------------------------------------------

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        yield from self.stem.parameters("stem")
        for i, block in enumerate(self.blocks):
            yield from block.parameters(f"blocks.{i}")
        yield "head.weight", self.head_weight
        yield "head.bias", self.head_bias

    def parameters(self) -> Dict[str, Tensor]:
        return dict(self.named_parameters())

    def trainable_parameters(self) -> Dict[str, Tensor]:
        return {name: t for name, t in self.named_parameters() if t.requires_grad}

    def named_buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        yield from self.stem.buffers("stem")
        for i, block in enumerate(self.blocks):
            yield from block.buffers(f"blocks.{i}")

    def num_parameters(self) -> int:
        return sum(t.size for _, t in self.named_parameters())

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Copies of every parameter and batchnorm buffer, in a stable order."""
        state = {name: t.data.copy() for name, t in self.named_parameters()}
        state.update({name: arr.copy() for name, arr in self.named_buffers()})
        return dict(sorted(state.items()))

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = self.parameters()
        buffers = dict(self.named_buffers())
        expected = set(params) | set(buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ConfigurationError(f"state does not match model: missing={missing} unexpected={extra}")
        for name, arr in state.items():
            target = params[name].data if name in params else buffers[name]
            if target.shape != arr.shape:
                raise DimensionError("load_state_dict", f"{name}: {list(arr.shape)} vs {list(target.shape)}", axes=(name,))
            if name in params:
                params[name].data = np.array(arr, dtype=self.mode.dtype)
            else:
                target[...] = arr

    def zero_grad(self) -> None:
        for _, t in self.named_parameters():
            t.grad = None

    def architecture(self) -> Dict[str, object]:
        return {
            "model": "MicroResNet",
            "widths": list(self.widths),
            "num_classes": self.num_classes,
            "in_channels": self.in_channels,
            "precision": self.mode.value,
            "frozen_prefix": self.frozen_prefix,
        }


def build_model(
    widths: Sequence[int] = DEFAULT_WIDTHS,
    num_classes: int = 4,
    seed: int = 0,
    in_channels: int = IMAGE_CHANNELS,
    mode: ScalarMode = ScalarMode.SINGLE,
) -> MicroResNet:
    """
    Build a MicroResNet with He-style fan-in initialization.

    Conv and linear weights ~ N(0, 2 / fan_in); batchnorm gamma = 1, beta = 0;
    head bias = 0. Identical arguments give bit-identical parameters.
    """
    widths = tuple(int(w) for w in widths)
    if len(widths) != NUM_BLOCKS:
        raise ConfigurationError(f"widths must list {NUM_BLOCKS} block widths, got {len(widths)}")
    if any(w <= 0 for w in widths):
        raise ConfigurationError(f"widths must be positive, got {widths}")
    if num_classes < 2:
        raise ConfigurationError(f"num_classes must be >= 2, got {num_classes}")

    rng = _rng(seed, _BACKBONE_STREAM)
    stem = ConvBN.create(rng, in_channels, widths[0], 3, 1, mode)
    blocks: List[ResidualBlock] = []
    c_in = widths[0]
    for i, c_out in enumerate(widths):
        stride = 1 if i == 0 else 2
        blocks.append(ResidualBlock.create(rng, c_in, c_out, stride, mode))
        c_in = c_out

    head_w, head_b = _init_head(seed, widths[-1], num_classes, mode)
    model = MicroResNet(
        widths=widths,
        num_classes=num_classes,
        in_channels=in_channels,
        mode=mode,
        stem=stem,
        blocks=blocks,
        head_weight=head_w,
        head_bias=head_b,
    )
    logger.debug("Built MicroResNet widths=%s K=%d params=%d", widths, num_classes, model.num_parameters())
    return model


def _init_head(seed: int, features: int, num_classes: int, mode: ScalarMode) -> Tuple[Tensor, Tensor]:
    rng = _rng(seed, _HEAD_STREAM)
    weight = Tensor(_he_normal(rng, (num_classes, features), features, mode), requires_grad=True)
    bias = Tensor(np.zeros(num_classes, dtype=mode.dtype), requires_grad=True)
    return weight, bias


def freeze_prefix(model: MicroResNet, frozen_layers: int) -> MicroResNet:
    """
    Fix the stem and blocks 1..L; everything after them and the head stay
    trainable. Calling again with a smaller L unfreezes the tail again.
    """
    if not 0 <= frozen_layers <= NUM_BLOCKS:
        raise ConfigurationError(f"frozen prefix L must be in [0, {NUM_BLOCKS}], got {frozen_layers}")
    model.stem_frozen = frozen_layers >= 1
    for _, t in model.stem.parameters("stem"):
        t.requires_grad = not model.stem_frozen
    for i, block in enumerate(model.blocks):
        block.frozen = i < frozen_layers
        for _, t in block.parameters(f"blocks.{i}"):
            t.requires_grad = not block.frozen
    model.head_weight.requires_grad = True
    model.head_bias.requires_grad = True
    model.frozen_prefix = frozen_layers
    logger.info("Frozen prefix L=%d (%d trainable tensors)", frozen_layers, len(model.trainable_parameters()))
    return model


def replace_head(model: MicroResNet, new_num_classes: int, seed: int) -> MicroResNet:
    """Re-draw the classifier for a new class count; the backbone is untouched."""
    if new_num_classes < 2:
        raise ConfigurationError(f"num_classes must be >= 2, got {new_num_classes}")
    model.head_weight, model.head_bias = _init_head(seed, model.widths[-1], new_num_classes, model.mode)
    model.num_classes = new_num_classes
    return model
