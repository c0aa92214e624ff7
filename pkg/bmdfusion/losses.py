"""regression losses and the l1 weight penalty"""
from __future__ import annotations

from typing import Iterable

import numpy as np

from bmdfusion.config import WeightedSmoothL1Config
from bmdfusion.errors import ParameterError, shape_mismatch
from bmdfusion.model.layers import WEIGHT, Parameter
from bmdfusion.tensor import ops
from bmdfusion.tensor.core import Tensor


def _pair(y, y_hat: Tensor):
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=y_hat.dtype).reshape(-1)
    if y_hat.ndim != 1 or y.shape != y_hat.shape:
        raise shape_mismatch("loss", y.shape, y_hat.shape)
    if y.size == 0:
        raise ParameterError("loss over an empty batch")
    return y


def huber(y, y_hat: Tensor, beta: float) -> Tensor:
    """per-sample huber of e = y - y_hat, knee at |e| <= beta"""
    y = _pair(y, y_hat)
    return ops.huber(ops.sub(Tensor(y), y_hat), beta)


def sample_weight(y, cfg: WeightedSmoothL1Config) -> np.ndarray:
    """w = 1 + lambda * |y - c|; a constant, never differentiated"""
    return 1.0 + cfg.lam * np.abs(np.asarray(y, dtype=np.float64) - cfg.center)


def weighted_smooth_l1(y, y_hat: Tensor, cfg: WeightedSmoothL1Config) -> Tensor:
    y = _pair(y, y_hat)
    w = Tensor(sample_weight(y, cfg).astype(y_hat.dtype))
    return ops.mean(ops.mul(w, huber(y, y_hat, cfg.beta)))


def huber_loss(y, y_hat: Tensor, beta: float) -> Tensor:
    return ops.mean(huber(y, y_hat, beta))


def mse_loss(y, y_hat: Tensor) -> Tensor:
    y = _pair(y, y_hat)
    return ops.mean(ops.square(ops.sub(Tensor(y), y_hat)))


def l1_penalty(params: Iterable[Parameter], l1: float) -> Tensor:
    """l1 * sum |w| over weight matrices; biases, norms and fusion scalars are exempt"""
    weights = [p for p in params if getattr(p, "kind", WEIGHT) == WEIGHT]
    if l1 == 0.0 or not weights:
        return Tensor(0.0)
    total = ops.reduce_sum(ops.absolute(weights[0]))
    for p in weights[1:]:
        total = ops.add(total, ops.reduce_sum(ops.absolute(p)))
    return ops.mul_scalar(total, l1)


def configured_loss(name: str, cfg: WeightedSmoothL1Config):
    """loss callable (y, y_hat) -> scalar tensor for a FusionModelConfig.loss name"""
    if name == "weighted_smooth_l1":
        return lambda y, y_hat: weighted_smooth_l1(y, y_hat, cfg)
    if name == "huber":
        return lambda y, y_hat: huber_loss(y, y_hat, cfg.beta)
    if name == "mse":
        return mse_loss
    raise ParameterError(f"unknown loss {name!r}")
