"""
Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array (row-major, NCHW for images) together with an
optional gradient buffer. Operators are `Function` subclasses: `apply` runs
the forward pass on raw arrays and links the result to its inputs, and
`backward` later walks that graph in reverse topological order.

Only float32 ("single") and float64 ("double") arrays are accepted, and
all tensors taking part in one operator must share the same precision.
"""

from __future__ import annotations

import logging
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import ContractError

logger = logging.getLogger(__name__)


class ScalarMode(str, Enum):
    """Floating-point precision of a computation graph."""

    SINGLE = "single"
    DOUBLE = "double"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32 if self is ScalarMode.SINGLE else np.float64)

    @property
    def code(self) -> int:
        """Checkpoint dtype code (0 = single, 1 = double)."""
        return 0 if self is ScalarMode.SINGLE else 1

    @classmethod
    def from_dtype(cls, dtype: Any) -> "ScalarMode":
        dtype = np.dtype(dtype)
        if dtype == np.float32:
            return cls.SINGLE
        if dtype == np.float64:
            return cls.DOUBLE
        raise ContractError(f"unsupported tensor dtype {dtype}; expected float32 or float64")

    @classmethod
    def from_code(cls, code: int) -> "ScalarMode":
        if code == 0:
            return cls.SINGLE
        if code == 1:
            return cls.DOUBLE
        raise ContractError(f"unknown dtype code {code}")


class Tensor:
    """
    n-dimensional array that can take part in reverse-mode differentiation.

    Leaves created by the user have ``creator is None``. Results of operators
    keep a reference to the `Function` that produced them.
    """

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        creator: Optional["Function"] = None,
        name: Optional[str] = None,
        mode: Optional[ScalarMode] = None,
    ) -> None:
        arr = np.asarray(data)
        if mode is not None:
            arr = arr.astype(mode.dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.creator = creator
        self.name = name
        self.grad: Optional[np.ndarray] = None

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------

    @property
    def dims(self) -> List[int]:
        return list(self.data.shape)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def mode(self) -> ScalarMode:
        return ScalarMode.from_dtype(self.data.dtype)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got dims {self.dims}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, wrt: Optional[Iterable["Tensor"]] = None) -> None:
        backward(self, wrt=wrt)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(dims={self.dims}, mode={self.mode.value}, requires_grad={self.requires_grad}{label})"


class Function:
    """
    Base class for differentiable operators.

    Subclasses implement `forward` on raw arrays and `backward`, which maps
    the gradient w.r.t. the output to one gradient (or None) per input.
    ``needs_input_grad`` is filled in by the backward pass so operators can
    skip work for inputs that do not lead to any requested gradient.
    """

    def __init__(self, *tensors: Tensor) -> None:
        self.inputs: Tuple[Tensor, ...] = tensors
        self.needs_input_grad: Tuple[bool, ...] = tuple(t.requires_grad for t in tensors)

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *tensors: Tensor, **kwargs: Any) -> Tensor:
        dtypes = {t.data.dtype for t in tensors}
        if len(dtypes) > 1:
            raise ContractError(
                f"{cls.__name__}: mixed precision inputs {sorted(str(d) for d in dtypes)}; "
                "all tensors in one graph must share one precision"
            )
        func = cls(*tensors)
        out = func.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = any(t.requires_grad for t in tensors)
        return Tensor(out, requires_grad=requires_grad, creator=func if requires_grad else None)


def _topological_order(root: Tensor) -> List[Tensor]:
    """Inputs before consumers; iterative so deep graphs do not hit recursion limits."""
    order: List[Tensor] = []
    seen = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node.creator is not None:
            for parent in node.creator.inputs:
                if id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor, wrt: Optional[Iterable[Tensor]] = None) -> None:
    """
    Accumulate d(loss)/d(t) into ``t.grad`` for differentiable leaves.

    Args:
        loss: single-element tensor at the root of the graph.
        wrt: optional subset of leaves to differentiate for. When given, only
            those leaves receive gradients and operators skip the work for
            branches that do not reach them (used by attacks, which need the
            input gradient only).

    Raises:
        ContractError: if ``loss`` is not a scalar.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got dims {loss.dims}")
    if not loss.requires_grad:
        return

    targets = None if wrt is None else {id(t) for t in wrt}
    order = _topological_order(loss)

    reaches: Dict[int, bool] = {}
    for node in order:
        if node.creator is None:
            hit = node.requires_grad and (targets is None or id(node) in targets)
        else:
            hit = any(reaches.get(id(p), False) for p in node.creator.inputs)
        reaches[id(node)] = hit

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None or not reaches[id(node)]:
            continue
        if node.creator is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        func = node.creator
        func.needs_input_grad = tuple(reaches.get(id(p), False) for p in func.inputs)
        for parent, pg in zip(func.inputs, func.backward(g)):
            if pg is None or not reaches.get(id(parent), False):
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
