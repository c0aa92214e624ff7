"""parameter containers and the small building blocks the model is made of"""
from __future__ import annotations

from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from bmdfusion.errors import CheckpointError
from bmdfusion.tensor import ops
from bmdfusion.tensor.core import Tensor

WEIGHT = "weight"
BIAS = "bias"
NORM = "norm"
SCALAR = "scalar"


class Parameter(Tensor):
    """trainable leaf; kind decides whether the l1 penalty applies"""

    def __init__(self, data, kind: str = WEIGHT, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.kind = kind


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """walks attributes for parameters; lists and dicts of modules are followed"""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            yield from _walk(f"{prefix}{name}", value)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise CheckpointError(f"parameter names differ: missing {missing}, unexpected {extra}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise CheckpointError(f"{name}: stored shape {arr.shape} != model shape {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)
            p.zero_grad()

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())


def _walk(name: str, value) -> Iterator[Tuple[str, Parameter]]:
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=f"{name}.")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{name}.{i}", item)
    elif isinstance(value, dict):
        for key, item in value.items():
            yield from _walk(f"{name}.{key}", item)


class Linear(Module):
    """x @ W (+ b); W stored as [in, out]"""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 dtype=np.float64, bias: bool = True):
        self.weight = Parameter(fan_in_uniform(rng, (in_dim, out_dim), in_dim, dtype), WEIGHT)
        self.bias = Parameter(np.zeros(out_dim, dtype=dtype), BIAS) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    """same-size convolution with edge-replicated borders"""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator, dtype=np.float64):
        fan_in = in_ch * kernel * kernel
        self.weight = Parameter(fan_in_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in, dtype), WEIGHT)
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype), BIAS)
        self.pad = kernel // 2

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(ops.pad_edge(x, self.pad), self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float64, eps: float = 1e-5):
        self.gain = Parameter(np.ones(dim, dtype=dtype), NORM)
        self.bias = Parameter(np.zeros(dim, dtype=dtype), NORM)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gain, self.bias, self.eps)


def scalar_parameter(value: float, dtype=np.float64) -> Parameter:
    return Parameter(np.full((1,), value, dtype=dtype), SCALAR)


def dtype_of(precision: Optional[str]):
    return np.float32 if precision == "float32" else np.float64
