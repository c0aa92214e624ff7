"""evaluation report assembled from per-fold and pooled results"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from bmdfusion.evaluation.regression import RegressionMetrics, pearson_fisher_ci, regression_metrics

METRIC_COLUMNS = ("mse", "mae", "r2")


def _clean(value):
    """json-safe: numpy scalars to python, nan/inf to None"""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def metrics_table(fold_metrics: Dict[int, RegressionMetrics]) -> pd.DataFrame:
    """fold, mse, mae, r2 rows followed by mean and sd summary rows"""
    rows = [{"fold": str(k), **{c: getattr(m, c) for c in METRIC_COLUMNS}} for k, m in sorted(fold_metrics.items())]
    frame = pd.DataFrame(rows, columns=["fold", *METRIC_COLUMNS])
    values = frame[list(METRIC_COLUMNS)].astype(float)
    summary = pd.DataFrame([
        {"fold": "mean", **values.mean(axis=0).to_dict()},
        {"fold": "sd", **values.std(axis=0, ddof=1).to_dict()},
    ])
    return pd.concat([frame, summary], ignore_index=True)


@dataclass
class EvaluationReport:
    config_hash: str
    fold_metrics: Dict[int, RegressionMetrics]
    pooled: RegressionMetrics
    pearson: Dict[str, float]
    screening: Optional[Dict[str, Any]] = None
    attention: Optional[Dict[str, Any]] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, config_hash: str, folds: Dict[int, tuple], level: float = 0.95) -> "EvaluationReport":
        """folds maps fold -> (y_true, y_pred); pooled metrics use every out-of-fold prediction"""
        fold_metrics = {k: regression_metrics(y, p) for k, (y, p) in folds.items()}
        y_all = np.concatenate([np.asarray(y) for y, _ in folds.values()])
        p_all = np.concatenate([np.asarray(p) for _, p in folds.values()])
        pearson: Dict[str, float] = {}
        if y_all.size >= 4 and np.std(y_all) > 0 and np.std(p_all) > 0:
            r, lo, hi = pearson_fisher_ci(y_all, p_all, level)
            pearson = {"r": r, "ci_lo": lo, "ci_hi": hi, "level": level, "n": int(y_all.size)}
        return cls(config_hash, fold_metrics, regression_metrics(y_all, p_all), pearson)

    def summary(self) -> Dict[str, Dict[str, float]]:
        table = metrics_table(self.fold_metrics).set_index("fold")
        return {c: {"mean": float(table.loc["mean", c]), "sd": float(table.loc["sd", c])} for c in METRIC_COLUMNS}

    def to_dict(self) -> Dict[str, Any]:
        out = {
            "config_hash": self.config_hash,
            "folds": {str(k): m.to_dict() for k, m in sorted(self.fold_metrics.items())},
            "summary": self.summary() if len(self.fold_metrics) > 1 else {},
            "pooled": self.pooled.to_dict(),
            "pearson": self.pearson,
        }
        if self.screening is not None:
            out["screening"] = self.screening
        if self.attention is not None:
            out["attention"] = self.attention
        out.update(self.extra)
        return _clean(out)

    def to_json(self, path: Optional[Path] = None) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, indent=2)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(_clean(payload), sort_keys=True, indent=2) + "\n", encoding="utf-8")
