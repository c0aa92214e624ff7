"""paired t-test with the t distribution evaluated through the incomplete beta function"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict

import numpy as np
from scipy import special

from bmdfusion.errors import ParameterError, shape_mismatch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PairedTTest:
    t: float
    p: float
    dof: int
    mean_diff: float
    degenerate: bool = False

    def to_dict(self) -> Dict:
        return asdict(self)


def t_two_sided_p(t: float, dof: int) -> float:
    """P(|T| >= |t|) = I_{dof/(dof+t^2)}(dof/2, 1/2)"""
    if math.isinf(t):
        return 0.0
    return float(special.betainc(dof / 2.0, 0.5, dof / (dof + t * t)))


def t_cdf(t: float, dof: int) -> float:
    tail = 0.5 * t_two_sided_p(t, dof)
    return 1.0 - tail if t > 0 else tail


def paired_t_test(a, b) -> PairedTTest:
    """two-sided paired test of mean(a - b) = 0 with n - 1 degrees of freedom.

    Constant differences make the statistic degenerate: t is 0 when they are
    all zero and +-inf otherwise; the result is flagged.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise shape_mismatch("paired_t_test", a.shape, b.shape)
    if a.size < 2:
        raise ParameterError(f"paired t-test needs >= 2 pairs, got {a.size}")
    d = a - b
    dof = d.size - 1
    mean = float(d.mean())
    if np.ptp(d) <= 1e-12 * max(1.0, abs(mean)):
        logger.warning("paired t-test: differences have zero variance")
        if mean == 0.0 or np.all(d == 0):
            return PairedTTest(0.0, 1.0, dof, 0.0, degenerate=True)
        return PairedTTest(math.copysign(math.inf, mean), 0.0, dof, mean, degenerate=True)
    t = mean / (d.std(ddof=1) / math.sqrt(d.size))
    return PairedTTest(float(t), t_two_sided_p(t, dof), dof, mean)
