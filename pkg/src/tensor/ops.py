"""
Forward operators with their reverse-mode rules.

Everything here is what a small residual CNN needs: 2-D convolution,
batch normalization, ReLU, global average pooling, a dense layer, the
residual addition, and a numerically stable softmax cross-entropy. A few
elementwise helpers (`mul`, `tensor_sum`, `flatten`) exist for losses
built in tests and for linear classifiers.

Layout is row-major NCHW throughout. No broadcasting beyond the per-channel
scale/shift inside batch normalization and the bias of `linear`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.config.model_config import BN_EPSILON, BN_MOMENTUM
from src.errors import ConfigurationError, ContractError, DimensionError
from src.tensor.tensor import Function, Tensor


def _require_rank(op: str, name: str, arr: np.ndarray, rank: int) -> None:
    if arr.ndim != rank:
        raise DimensionError(op, f"{name} must have rank {rank}, got dims {list(arr.shape)}", axes=(name,))


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------

class Conv2d(Function):
    def forward(self, x: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 0) -> np.ndarray:
        _require_rank("conv2d", "input", x, 4)
        _require_rank("conv2d", "weight", w, 4)
        n, c, h, wd = x.shape
        o, i, kh, kw = w.shape
        if c != i:
            raise DimensionError(
                "conv2d", f"input has {c} channels but weight expects {i}", axes=("input.C", "weight.I")
            )
        if kh != kw:
            raise DimensionError("conv2d", f"kernel must be square, got {kh}x{kw}", axes=("weight.K",))
        if stride < 1 or pad < 0:
            raise ContractError(f"conv2d: stride must be >= 1 and pad >= 0 (stride={stride}, pad={pad})")
        hp, wp = h + 2 * pad, wd + 2 * pad
        if hp < kh or wp < kw:
            raise DimensionError(
                "conv2d", f"padded input {hp}x{wp} smaller than kernel {kh}x{kw}", axes=("input.H", "input.W")
            )
        ho = (hp - kh) // stride + 1
        wo = (wp - kw) // stride + 1

        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
        windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, O

        self.windows = windows
        self.weight = w
        self.stride, self.pad = stride, pad
        self.in_shape = x.shape
        self.out_hw = (ho, wo)
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        need_x, need_w = self.needs_input_grad
        dx = dw = None
        if need_w:
            dw = np.tensordot(grad, self.windows, axes=([0, 2, 3], [0, 2, 3]))
        if need_x:
            n, c, h, wd = self.in_shape
            k = self.weight.shape[2]
            s, p = self.stride, self.pad
            ho, wo = self.out_hw
            cols = np.tensordot(grad, self.weight, axes=([1], [0]))  # N, Ho, Wo, C, K, K
            dxp = np.zeros((n, c, h + 2 * p, wd + 2 * p), dtype=grad.dtype)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += (
                        cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            dx = dxp[:, :, p:p + h, p:p + wd] if p else dxp
        return dx, dw


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation, no bias. Output H = floor((H + 2*pad - K) / stride) + 1."""
    return Conv2d.apply(x, weight, stride=stride, pad=pad)


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------

@dataclass
class RunningStats:
    """Per-channel running mean/variance owned by a batchnorm layer."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, channels: int, dtype: np.dtype) -> "RunningStats":
        return cls(mean=np.zeros(channels, dtype=dtype), var=np.ones(channels, dtype=dtype))


class BatchNorm2d(Function):
    def forward(
        self,
        x: np.ndarray,
        gamma: np.ndarray,
        beta: np.ndarray,
        running: RunningStats,
        mode: str = "train",
        eps: float = BN_EPSILON,
        momentum: float = BN_MOMENTUM,
    ) -> np.ndarray:
        _require_rank("batchnorm2d", "input", x, 4)
        c = x.shape[1]
        if gamma.shape != (c,) or beta.shape != (c,):
            raise DimensionError(
                "batchnorm2d",
                f"gamma/beta dims {list(gamma.shape)}/{list(beta.shape)} do not match {c} channels",
                axes=("input.C", "gamma", "beta"),
            )
        if running.mean.shape != (c,) or running.var.shape != (c,):
            raise DimensionError("batchnorm2d", "running stats do not match channel count", axes=("running",))
        if mode not in ("train", "eval"):
            raise ContractError(f"batchnorm2d: mode must be 'train' or 'eval', got {mode!r}")

        if mode == "train":
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            count = x.shape[0] * x.shape[2] * x.shape[3]
            unbiased = var * (count / (count - 1)) if count > 1 else var
            running.mean[...] = (1.0 - momentum) * running.mean + momentum * mean
            running.var[...] = (1.0 - momentum) * running.var + momentum * unbiased
        else:
            mean, var = running.mean, running.var

        inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        self.xhat, self.inv_std, self.gamma, self.mode = xhat, inv_std, gamma, mode
        return gamma[None, :, None, None] * xhat + beta[None, :, None, None]

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        need_x, need_g, need_b = self.needs_input_grad
        xhat = self.xhat
        dgamma = (grad * xhat).sum(axis=(0, 2, 3)) if need_g else None
        dbeta = grad.sum(axis=(0, 2, 3)) if need_b else None
        dx = None
        if need_x:
            dxhat = grad * self.gamma[None, :, None, None]
            scale = self.inv_std[None, :, None, None]
            if self.mode == "train":
                count = grad.shape[0] * grad.shape[2] * grad.shape[3]
                mean_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True) / count
                mean_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True) / count
                dx = scale * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
            else:
                dx = dxhat * scale
        return dx, dgamma, dbeta


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_stats: RunningStats,
    mode: str = "train",
    eps: float = BN_EPSILON,
    momentum: float = BN_MOMENTUM,
) -> Tensor:
    """
    Per-channel batch normalization.

    ``train`` normalizes with batch statistics and moves the running stats by
    an exponential moving average (unbiased variance); ``eval`` reads the
    running stats only and leaves them untouched.
    """
    return BatchNorm2d.apply(x, gamma, beta, running=running_stats, mode=mode, eps=eps, momentum=momentum)


# ---------------------------------------------------------------------------
# Elementwise / pooling / dense
# ---------------------------------------------------------------------------

class ReLU(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.mask = x > 0
        return np.where(self.mask, x, np.zeros((), dtype=x.dtype))

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (np.where(self.mask, grad, np.zeros((), dtype=grad.dtype)),)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


class GlobalAvgPool(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        _require_rank("global_avg_pool", "input", x, 4)
        self.in_shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        n, c, h, w = self.in_shape
        dx = np.broadcast_to((grad / (h * w))[:, :, None, None], self.in_shape)
        return (np.ascontiguousarray(dx),)


def global_avg_pool(x: Tensor) -> Tensor:
    """N x C x H x W -> N x C."""
    return GlobalAvgPool.apply(x)


class Linear(Function):
    def forward(self, x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
        _require_rank("linear", "input", x, 2)
        _require_rank("linear", "weight", w, 2)
        if x.shape[1] != w.shape[1]:
            raise DimensionError(
                "linear", f"input has {x.shape[1]} features, weight expects {w.shape[1]}",
                axes=("input.F", "weight.in"),
            )
        if b.shape != (w.shape[0],):
            raise DimensionError("linear", f"bias dims {list(b.shape)} do not match {w.shape[0]} outputs", axes=("bias",))
        self.x, self.w = x, w
        return x @ w.T + b

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        need_x, need_w, need_b = self.needs_input_grad
        dx = grad @ self.w if need_x else None
        dw = grad.T @ self.x if need_w else None
        db = grad.sum(axis=0) if need_b else None
        return dx, dw, db


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x (N x F) @ weight.T (F x O) + bias (O)."""
    return Linear.apply(x, weight, bias)


class Add(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.shape != b.shape:
            raise DimensionError(
                "residual_add", f"dims {list(a.shape)} and {list(b.shape)} differ", axes=("a", "b")
            )
        return a + b

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return grad, grad


def residual_add(a: Tensor, b: Tensor) -> Tensor:
    return Add.apply(a, b)


class Mul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.shape != b.shape:
            raise DimensionError("mul", f"dims {list(a.shape)} and {list(b.shape)} differ", axes=("a", "b"))
        self.a, self.b = a, b
        return a * b

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        need_a, need_b = self.needs_input_grad
        return (grad * self.b if need_a else None), (grad * self.a if need_b else None)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Mul.apply(a, b)


class Sum(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.in_shape = x.shape
        return np.asarray(x.sum(), dtype=x.dtype)

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (np.full(self.in_shape, grad.reshape(()), dtype=grad.dtype),)


def tensor_sum(x: Tensor) -> Tensor:
    return Sum.apply(x)


class Flatten(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (grad.reshape(self.in_shape),)


def flatten(x: Tensor) -> Tensor:
    """Keep the batch axis, collapse the rest."""
    return Flatten.apply(x)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def _check_labels(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    _require_rank("softmax_cross_entropy", "logits", logits, 2)
    n, k = logits.shape
    if k < 2:
        raise ConfigurationError(f"softmax_cross_entropy needs at least 2 classes, got K={k}")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != n:
        raise DimensionError(
            "softmax_cross_entropy", f"{labels.shape[0]} labels for batch of {n}", axes=("logits.N", "labels")
        )
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ContractError(f"softmax_cross_entropy: labels must lie in [0, {k})")
    return labels


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def per_sample_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Unreduced -log softmax(logits)[label]; no graph is recorded."""
    labels = _check_labels(logits, labels)
    return -log_softmax(logits)[np.arange(labels.shape[0]), labels]


class SoftmaxCrossEntropy(Function):
    def forward(self, logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
        labels = _check_labels(logits, labels)
        n = logits.shape[0]
        logp = log_softmax(logits)
        self.probs = np.exp(logp)
        self.labels = labels
        loss = -logp[np.arange(n), labels].mean()
        return np.asarray(max(loss, 0.0), dtype=logits.dtype)

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        n = self.probs.shape[0]
        d = self.probs.copy()
        d[np.arange(n), self.labels] -= 1.0
        return (d * (grad.reshape(()) / n),)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], log-sum-exp stabilized."""
    return SoftmaxCrossEntropy.apply(logits, labels=labels)
