"""k-fold cross-validation and the ablation matrix over fusion modes and losses"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from bmdfusion.config import FUSION_MODES, LOSSES, AugmentationPolicy, FusionModelConfig, config_hash
from bmdfusion.errors import BmdFusionError, ConfigError
from bmdfusion.evaluation.regression import extreme_bin_mse, regression_metrics
from bmdfusion.evaluation.report import EvaluationReport, metrics_table
from bmdfusion.evaluation.stats import paired_t_test
from bmdfusion.training.trainer import FoldResult, train_fold

logger = logging.getLogger(__name__)

REFERENCE_VARIANT = "bidirectional"
DEFAULT_VARIANTS = (
    "bidirectional", "img_to_meta", "meta_to_img", "concat",
    "image_only", "metadata_only", "bidirectional:mse", "bidirectional:huber",
)


def parse_variant(name: str) -> Tuple[str, Optional[str]]:
    """variant names are <fusion_mode> or <fusion_mode>:<loss>"""
    mode, _, loss = name.partition(":")
    if mode not in FUSION_MODES:
        raise ConfigError(f"variant {name!r}: unknown fusion mode {mode!r}")
    if loss and loss not in LOSSES:
        raise ConfigError(f"variant {name!r}: unknown loss {loss!r}")
    return mode, loss or None


def variant_config(base: FusionModelConfig, name: str) -> FusionModelConfig:
    mode, loss = parse_variant(name)
    return base.replace(fusion_mode=mode, loss=loss or base.loss)


@dataclass
class CrossValidationResult:
    config: FusionModelConfig
    folds: List[FoldResult]

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def predictions(self) -> pd.DataFrame:
        """out-of-fold predictions; every sample appears exactly once"""
        frames = [
            pd.DataFrame({"id": r.test_ids, "fold": r.fold, "y_true": r.y_true, "y_pred": r.y_pred})
            for r in self.folds
        ]
        return pd.concat(frames, ignore_index=True)

    def report(self) -> EvaluationReport:
        return EvaluationReport.from_predictions(
            self.config_hash, {r.fold: (r.y_true, r.y_pred) for r in self.folds}
        )

    def metrics_table(self) -> pd.DataFrame:
        return metrics_table({r.fold: regression_metrics(r.y_true, r.y_pred) for r in self.folds})

    def fold_metric(self, name: str) -> np.ndarray:
        return np.array([getattr(regression_metrics(r.y_true, r.y_pred), name) for r in self.folds])

    def extreme_bin_mse(self) -> float:
        oof = self.predictions()
        return extreme_bin_mse(oof["y_true"], oof["y_pred"])


def _run_fold(manifest, plan, fold, cfg, policy) -> FoldResult:
    try:
        return train_fold(manifest, plan, fold, cfg, policy)
    except BmdFusionError as exc:
        raise type(exc)(f"fold {fold}: {exc}") from exc


def cross_validate(manifest, plan, cfg: FusionModelConfig, workers: int = 1,
                   policy: Optional[AugmentationPolicy] = None,
                   folds: Optional[Sequence[int]] = None) -> CrossValidationResult:
    """trains every fold, in a process pool when workers > 1; results come back in fold order"""
    folds = list(range(plan.n_folds)) if folds is None else list(folds)
    logger.info("cross-validating %s over %d folds with %d worker(s)", cfg.fusion_mode, len(folds), workers)
    if workers <= 1 or len(folds) == 1:
        results = [_run_fold(manifest, plan, k, cfg, policy) for k in folds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_fold, manifest, plan, k, cfg, policy) for k in folds]
            results = [f.result() for f in futures]
    for r in results:
        m = regression_metrics(r.y_true, r.y_pred)
        logger.info("fold %d: mse %.5f mae %.5f r2 %.4f", r.fold, m.mse, m.mae, m.r2)
    return CrossValidationResult(cfg, sorted(results, key=lambda r: r.fold))


@dataclass
class AblationResult:
    variants: Dict[str, CrossValidationResult] = field(default_factory=dict)

    def per_fold(self) -> pd.DataFrame:
        rows = []
        for name, cv in self.variants.items():
            for r in cv.folds:
                m = regression_metrics(r.y_true, r.y_pred)
                rows.append({"variant": name, "fold": r.fold, "mse": m.mse, "mae": m.mae, "r2": m.r2})
        return pd.DataFrame(rows, columns=["variant", "fold", "mse", "mae", "r2"])

    def summary(self) -> pd.DataFrame:
        """mean and sd of each metric per variant, plus the extreme-bin mse"""
        rows = []
        for name, cv in self.variants.items():
            row = {"variant": name, "config_hash": cv.config_hash}
            for metric in ("mse", "mae", "r2"):
                values = cv.fold_metric(metric)
                row[f"{metric}_mean"] = float(np.mean(values))
                row[f"{metric}_sd"] = float(np.std(values, ddof=1)) if values.size > 1 else float("nan")
            row["extreme_mse"] = cv.extreme_bin_mse()
            rows.append(row)
        return pd.DataFrame(rows)

    def t_tests(self, reference: str = REFERENCE_VARIANT) -> pd.DataFrame:
        """paired t-tests of every other variant against the reference, per metric"""
        if reference not in self.variants:
            raise ConfigError(f"t-tests need the reference variant {reference!r}")
        ref = self.variants[reference]
        rows = []
        for name, cv in self.variants.items():
            if name == reference:
                continue
            for metric in ("mse", "mae", "r2"):
                test = paired_t_test(ref.fold_metric(metric), cv.fold_metric(metric))
                rows.append({"reference": reference, "variant": name, "metric": metric, **test.to_dict()})
        return pd.DataFrame(rows, columns=["reference", "variant", "metric", "t", "p", "dof", "mean_diff", "degenerate"])


def run_ablation_matrix(manifest, plan, base: FusionModelConfig, variants: Sequence[str] = DEFAULT_VARIANTS,
                        workers: int = 1, policy: Optional[AugmentationPolicy] = None) -> AblationResult:
    """full cross-validation for each named variant of the base config"""
    if len(variants) < 2:
        raise ConfigError("an ablation needs at least two variants")
    configs = {name: variant_config(base, name) for name in variants}
    result = AblationResult()
    for name, cfg in configs.items():
        result.variants[name] = cross_validate(manifest, plan, cfg, workers, policy)
    return result
