"""dense tensor with a reverse-mode gradient tape"""
from __future__ import annotations

import itertools
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from bmdfusion.errors import ParameterError, shape_mismatch

# f64 for gradient checks and reference values, f32 allowed for training
TOLERANCES = {
    np.dtype(np.float64): {"rel": 1e-9, "gradcheck": 1e-4},
    np.dtype(np.float32): {"rel": 1e-6, "gradcheck": 1e-2},
}

_grad_enabled: ContextVar[bool] = ContextVar("bmdfusion_grad_enabled", default=True)
_sequence = itertools.count()

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@contextmanager
def no_grad():
    """ops inside the block record nothing; scoped to the current thread/context"""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def grad_enabled() -> bool:
    return _grad_enabled.get()


class Tensor:
    """row-major real array that can take part in reverse-mode differentiation.

    Leaves created with requires_grad=True accumulate d(loss)/d(leaf) into
    ``grad`` when ``backward`` is called on a scalar result. Data is never
    modified by ops; only ``grad`` changes during a backward pass.
    """

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float64
        self.data: np.ndarray = np.array(arr, dtype=dtype, copy=True)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._grad: Optional[np.ndarray] = None
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._seq = next(_sequence)

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn) -> "Tensor":
        """wraps an op output, recording it when any parent needs a gradient"""
        out = cls.__new__(cls)
        out.data = data
        out.name = None
        out._grad = None
        out._seq = next(_sequence)
        out.requires_grad = grad_enabled() and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    @property
    def grad(self) -> Optional[np.ndarray]:
        if not self.requires_grad:
            return None
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    def zero_grad(self) -> None:
        if self.requires_grad:
            self._grad = np.zeros_like(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self._grad is None:
            self._grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self._grad += g

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise shape_mismatch("item", self.shape, ())
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """replays the tape from this tensor, then clears it"""
        if grad is None:
            if self.data.size != 1:
                raise ParameterError(f"backward on shape {self.shape} needs an explicit seed gradient")
            grad = np.ones_like(self.data)
        tape = GradTape.record(self)
        tape.replay(np.asarray(grad, dtype=self.data.dtype))
        tape.clear()

    def __repr__(self) -> str:
        req = ", requires_grad=True" if self.requires_grad else ""
        nm = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{req}{nm})"

    # operator sugar, all routed through ops
    def __add__(self, other):
        from bmdfusion.tensor import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from bmdfusion.tensor import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from bmdfusion.tensor import ops
        if isinstance(other, (int, float)):
            return ops.mul_scalar(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from bmdfusion.tensor import ops
        return ops.matmul(self, other)


class GradTape:
    """ordered record of the executed ops feeding one root tensor.

    ``record`` walks the graph and orders nodes by execution; ``replay``
    visits them in reverse and applies each saved backward rule.
    """

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def record(cls, root: Tensor) -> "GradTape":
        seen = set()
        stack = [root]
        nodes = []
        while stack:
            node = stack.pop()
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack.extend(node._parents)
        nodes.sort(key=lambda t: t._seq)
        return cls(nodes)

    def replay(self, seed: np.ndarray) -> None:
        if not self.nodes:
            return
        root = self.nodes[-1]
        pending: Dict[int, np.ndarray] = {id(root): seed}
        for node in reversed(self.nodes):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node._accumulate(g)
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

    def clear(self) -> None:
        for node in self.nodes:
            if not node.is_leaf:
                node._parents = ()
                node._backward = None
        self.nodes = []

    def __len__(self) -> int:
        return len(self.nodes)
