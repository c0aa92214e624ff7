"""adam with weight decay folded into the gradient"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from bmdfusion.config import OptimizerConfig
from bmdfusion.errors import shape_mismatch
from bmdfusion.tensor.core import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: Dict[int, np.ndarray] = field(default_factory=dict)
    v: Dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState,
              hyper: OptimizerConfig) -> List[np.ndarray]:
    """one bias-corrected adam update; g <- g + weight_decay * p before the moments.

    Parameters are replaced with new arrays; moments are keyed by position.
    """
    state.step += 1
    t = state.step
    updated = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise shape_mismatch("adam_step", p.shape, g.shape)
        g = g + hyper.weight_decay * p.data
        m = state.m.get(i, np.zeros_like(p.data))
        v = state.v.get(i, np.zeros_like(p.data))
        m = hyper.beta1 * m + (1.0 - hyper.beta1) * g
        v = hyper.beta2 * v + (1.0 - hyper.beta2) * g * g
        state.m[i], state.v[i] = m, v
        m_hat = m / (1.0 - hyper.beta1 ** t)
        v_hat = v / (1.0 - hyper.beta2 ** t)
        p.data = (p.data - hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)).astype(p.dtype)
        updated.append(p.data)
    return updated
