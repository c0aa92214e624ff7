"""t-score screening of predicted bmd: low bmd is the positive class"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import stats
from sklearn.metrics import (
    average_precision_score,
    confusion_matrix,
    precision_recall_curve,
    precision_recall_fscore_support,
    roc_auc_score,
    roc_curve,
)

from bmdfusion.config import ScreeningConfig
from bmdfusion.errors import ParameterError, shape_mismatch

logger = logging.getLogger(__name__)

LOW = "low_bmd"
NORMAL = "normal_bmd"


def t_score(bmd, cfg: Optional[ScreeningConfig] = None):
    """(bmd - young-adult mean) / young-adult sd"""
    cfg = cfg or ScreeningConfig()
    return (np.asarray(bmd, dtype=np.float64) - cfg.young_adult_mean) / cfg.young_adult_sd


def wilson_interval(successes: int, n: int, level: float = 0.95) -> Tuple[float, float]:
    """score interval for a binomial proportion; (nan, nan) when n == 0"""
    if n == 0:
        return float("nan"), float("nan")
    z = stats.norm.ppf(0.5 + level / 2.0)
    a = 2 * successes + z ** 2
    b = z * math.sqrt(z ** 2 + 4 * successes * (1 - successes / n))
    c = 2 * (n + z ** 2)
    return max(0.0, (a - b) / c), min(1.0, (a + b) / c)


def screening_score(y_hat) -> np.ndarray:
    """higher means more likely low bmd"""
    return -np.asarray(y_hat, dtype=np.float64)


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class ScreeningMetrics:
    threshold: float
    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    per_class: Dict[str, ClassMetrics]
    macro: Dict[str, float]
    weighted: Dict[str, float]
    sensitivity: float
    specificity: float
    sensitivity_ci: Tuple[float, float]
    specificity_ci: Tuple[float, float]
    roc_auc: float
    average_precision: float
    single_class: bool
    counts: Dict[str, float] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> Dict:
        return asdict(self)


def _ratio(num: int, den: int) -> float:
    return num / den if den else float("nan")


def screening_metrics(y, y_hat, cfg: Optional[ScreeningConfig] = None) -> ScreeningMetrics:
    """dichotomizes truth and prediction at the t-score threshold and scores the split"""
    cfg = cfg or ScreeningConfig()
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if y.shape != y_hat.shape:
        raise shape_mismatch("screening_metrics", y.shape, y_hat.shape)
    if y.size == 0:
        raise ParameterError("screening needs at least one sample")
    threshold = cfg.bmd_threshold
    truth = y < threshold
    pred = y_hat < threshold
    tn, fp, fn, tp = (int(v) for v in confusion_matrix(truth, pred, labels=[False, True]).ravel())
    precision, recall, f1, support = precision_recall_fscore_support(
        truth, pred, labels=[True, False], zero_division=0
    )
    per_class = {
        name: ClassMetrics(float(precision[i]), float(recall[i]), float(f1[i]), int(support[i]))
        for i, name in enumerate((LOW, NORMAL))
    }
    total = max(int(support.sum()), 1)
    macro = {"precision": float(precision.mean()), "recall": float(recall.mean()), "f1": float(f1.mean())}
    weighted = {
        "precision": float(np.dot(precision, support) / total),
        "recall": float(np.dot(recall, support) / total),
        "f1": float(np.dot(f1, support) / total),
    }
    single_class = bool(truth.all() or not truth.any())
    if single_class:
        logger.warning("screening: ground truth holds a single class; auc and ap undefined")
        auc = ap = float("nan")
    else:
        score = screening_score(y_hat)
        auc = float(roc_auc_score(truth, score))
        ap = float(average_precision_score(truth, score))
    osteo = cfg.osteoporosis_threshold
    counts = {
        "n": int(y.size),
        "low_bmd": int(truth.sum()),
        "prevalence": float(truth.mean()),
        "predicted_low_bmd": int(pred.sum()),
        "osteoporosis": int((y < osteo).sum()),
        "predicted_osteoporosis": int((y_hat < osteo).sum()),
        "osteoporosis_threshold": float(osteo),
    }
    return ScreeningMetrics(
        threshold=float(threshold),
        tp=tp, fp=fp, fn=fn, tn=tn,
        accuracy=(tp + tn) / y.size,
        per_class=per_class,
        macro=macro,
        weighted=weighted,
        sensitivity=_ratio(tp, tp + fn),
        specificity=_ratio(tn, tn + fp),
        sensitivity_ci=wilson_interval(tp, tp + fn, cfg.ci_level),
        specificity_ci=wilson_interval(tn, tn + fp, cfg.ci_level),
        roc_auc=auc,
        average_precision=ap,
        single_class=single_class,
        counts=counts,
    )


# curves and bootstrap bands

def roc_on_grid(truth: np.ndarray, score: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """tpr of the empirical step curve at each false-positive rate on the grid"""
    fpr, tpr, _ = roc_curve(truth, score)
    idx = np.searchsorted(fpr, grid, side="right") - 1
    return tpr[np.clip(idx, 0, len(tpr) - 1)]


def pr_on_grid(truth: np.ndarray, score: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """interpolated precision: the best precision reachable at recall >= r"""
    precision, recall, _ = precision_recall_curve(truth, score)
    order = np.argsort(recall, kind="stable")
    recall, precision = recall[order], precision[order]
    best_from_right = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, grid, side="left")
    out = np.zeros_like(grid)
    inside = idx < len(recall)
    out[inside] = best_from_right[idx[inside]]
    return out


@dataclass
class BootstrapBands:
    """pointwise percentile bands on fixed fpr / recall grids, plus auc and ap intervals"""

    fpr_grid: np.ndarray
    tpr: np.ndarray
    tpr_lo: np.ndarray
    tpr_hi: np.ndarray
    recall_grid: np.ndarray
    precision: np.ndarray
    precision_lo: np.ndarray
    precision_hi: np.ndarray
    auc: float
    auc_ci: Tuple[float, float]
    ap: float
    ap_ci: Tuple[float, float]
    n_boot: int

    def to_dict(self) -> Dict:
        out = {}
        for key, value in asdict(self).items():
            out[key] = value.tolist() if isinstance(value, np.ndarray) else value
        return out


def stratified_bootstrap_bands(y, y_hat, cfg: Optional[ScreeningConfig] = None,
                               n_boot: Optional[int] = None, seed: int = 0) -> BootstrapBands:
    """resamples positives and negatives separately so every replicate keeps both classes.

    Bands are plain percentiles of the replicates; a full-sample curve falling
    outside them is logged.
    """
    cfg = cfg or ScreeningConfig()
    n_boot = cfg.n_boot if n_boot is None else n_boot
    if n_boot < 1:
        raise ParameterError(f"n_boot must be >= 1, got {n_boot}")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    truth = y < cfg.bmd_threshold
    score = screening_score(y_hat)
    if score.shape != truth.shape:
        raise shape_mismatch("stratified_bootstrap_bands", truth.shape, score.shape)
    pos, neg = np.flatnonzero(truth), np.flatnonzero(~truth)
    if pos.size == 0 or neg.size == 0:
        raise ParameterError("bootstrap bands need both low and normal bmd samples")

    grid = np.linspace(0.0, 1.0, cfg.grid_points)
    tpr = roc_on_grid(truth, score, grid)
    prec = pr_on_grid(truth, score, grid)
    auc = float(roc_auc_score(truth, score))
    ap = float(average_precision_score(truth, score))

    tprs = np.empty((n_boot, grid.size))
    precs = np.empty((n_boot, grid.size))
    aucs = np.empty(n_boot)
    aps = np.empty(n_boot)
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n_boot)):
        rng = np.random.default_rng(child)
        idx = np.concatenate([rng.choice(pos, pos.size), rng.choice(neg, neg.size)])
        t, s = truth[idx], score[idx]
        tprs[i] = roc_on_grid(t, s, grid)
        precs[i] = pr_on_grid(t, s, grid)
        aucs[i] = roc_auc_score(t, s)
        aps[i] = average_precision_score(t, s)

    q = (50.0 * (1.0 - cfg.ci_level), 100.0 - 50.0 * (1.0 - cfg.ci_level))
    tpr_lo, tpr_hi = np.percentile(tprs, q, axis=0)
    prec_lo, prec_hi = np.percentile(precs, q, axis=0)
    auc_ci = tuple(float(v) for v in np.percentile(aucs, q))
    ap_ci = tuple(float(v) for v in np.percentile(aps, q))
    _log_outside("roc", tpr, tpr_lo, tpr_hi)
    _log_outside("pr", prec, prec_lo, prec_hi)
    _log_outside("auc", np.array([auc]), np.array([auc_ci[0]]), np.array([auc_ci[1]]))
    _log_outside("ap", np.array([ap]), np.array([ap_ci[0]]), np.array([ap_ci[1]]))
    return BootstrapBands(
        fpr_grid=grid, tpr=tpr, tpr_lo=tpr_lo, tpr_hi=tpr_hi,
        recall_grid=grid, precision=prec, precision_lo=prec_lo, precision_hi=prec_hi,
        auc=auc, auc_ci=auc_ci, ap=ap, ap_ci=ap_ci,
        n_boot=n_boot,
    )


def _log_outside(name: str, point: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> None:
    outside = int(np.count_nonzero((point < lo) | (point > hi)))
    if outside:
        logger.info("%s: full-sample estimate outside the bootstrap band at %d of %d points",
                    name, outside, point.size)
