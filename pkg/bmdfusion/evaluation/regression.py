"""regression metrics and pearson correlation with a fisher-z interval"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Tuple

import numpy as np
from scipy import stats
from sklearn.metrics import mean_absolute_error, mean_squared_error, r2_score

from bmdfusion.config import EXTREME_HIGH, EXTREME_LOW
from bmdfusion.errors import NumericalError, ParameterError, shape_mismatch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegressionMetrics:
    mse: float
    mae: float
    r2: float  # nan when undefined, see r2_defined
    n: int
    r2_defined: bool = True

    def to_dict(self) -> Dict:
        return asdict(self)


def _pair(y, y_hat) -> Tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if y.shape != y_hat.shape:
        raise shape_mismatch("metrics", y.shape, y_hat.shape)
    if y.size == 0:
        raise ParameterError("metrics need at least one sample")
    return y, y_hat


def regression_metrics(y, y_hat) -> RegressionMetrics:
    """mse, mae and r2 = 1 - SSE/SST; r2 is a flagged nan when n < 2 or y is constant"""
    y, y_hat = _pair(y, y_hat)
    mse = float(mean_squared_error(y, y_hat))
    mae = float(mean_absolute_error(y, y_hat))
    if y.size < 2 or np.all(y == y[0]):
        return RegressionMetrics(mse, mae, float("nan"), int(y.size), r2_defined=False)
    return RegressionMetrics(mse, mae, float(r2_score(y, y_hat)), int(y.size))


def extreme_bin_mse(y, y_hat, low: float = EXTREME_LOW, high: float = EXTREME_HIGH) -> float:
    """mse restricted to bmd < low or > high; nan when no sample qualifies"""
    y, y_hat = _pair(y, y_hat)
    mask = (y < low) | (y > high)
    if not mask.any():
        return float("nan")
    return float(mean_squared_error(y[mask], y_hat[mask]))


def fisher_ci(r: float, n: int, level: float = 0.95) -> Tuple[float, float]:
    """atanh(r) +- z / sqrt(n - 3), mapped back with tanh"""
    if n < 4:
        raise ParameterError(f"fisher interval needs n >= 4, got {n}")
    if abs(r) >= 1.0:
        return float(r), float(r)
    z = math.atanh(r)
    half = stats.norm.ppf(0.5 + level / 2.0) / math.sqrt(n - 3)
    return math.tanh(z - half), math.tanh(z + half)


def pearson_fisher_ci(y, y_hat, level: float = 0.95) -> Tuple[float, float, float]:
    """(r, lo, hi)"""
    y, y_hat = _pair(y, y_hat)
    if y.size < 4:
        raise ParameterError(f"pearson interval needs n >= 4, got {y.size}")
    if np.std(y) == 0 or np.std(y_hat) == 0:
        raise NumericalError("pearson correlation undefined for a zero-variance input")
    r = float(np.clip(stats.pearsonr(y, y_hat)[0], -1.0, 1.0))
    lo, hi = fisher_ci(r, y.size, level)
    return r, lo, hi
