"""robustness of a trained fold to randomly perturbed test images"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from bmdfusion.config import DEFAULT_SEED, AugmentationPolicy
from bmdfusion.data.augment import augment, sample_stream
from bmdfusion.evaluation.regression import RegressionMetrics, regression_metrics
from bmdfusion.errors import ParameterError
from bmdfusion.training.checkpoint import Checkpoint
from bmdfusion.training.trainer import SplitArrays, predict

logger = logging.getLogger(__name__)


@dataclass
class PerturbationResult:
    ids: List[str]
    y_true: np.ndarray
    original: np.ndarray
    perturbed_mean: np.ndarray
    original_metrics: RegressionMetrics
    perturbed_metrics: RegressionMetrics
    n_variants: int

    def to_dict(self) -> Dict:
        return {
            "n_variants": self.n_variants,
            "original": self.original_metrics.to_dict(),
            "perturbed": self.perturbed_metrics.to_dict(),
        }


def perturbation_test(checkpoint: Checkpoint, split: SplitArrays, policy: Optional[AugmentationPolicy] = None,
                      n_variants: int = 20, seed: int = DEFAULT_SEED) -> PerturbationResult:
    """predicts n_variants perturbed copies of every test image and averages per image.

    Metadata is left as is. Every variant set is predicted in the same batches
    as the unperturbed split, and the average is taken as offsets from the
    unperturbed prediction, so a policy that changes nothing reproduces the
    original metrics exactly.
    """
    if n_variants < 1:
        raise ParameterError(f"n_variants must be >= 1, got {n_variants}")
    policy = policy or AugmentationPolicy.perturbation()
    model = checkpoint.build_model()
    batch = checkpoint.config.eval_batch
    base, _ = predict(model, split.images, split.meta, batch)
    streams = [sample_stream(seed, sample_id) for sample_id in split.ids]
    offsets = np.zeros(len(split), dtype=np.float64)
    for _ in range(n_variants):
        images = np.stack([
            augment(split.images[i, 0].astype(np.float64), policy, streams[i])[None]
            for i in range(len(split))
        ]).astype(split.images.dtype)
        preds, _ = predict(model, images, split.meta, batch)
        offsets += preds.astype(np.float64) - base.astype(np.float64)
    mean = base.astype(np.float64) + offsets / n_variants
    y = split.y.astype(np.float64)
    result = PerturbationResult(
        ids=list(split.ids),
        y_true=y,
        original=base.astype(np.float64),
        perturbed_mean=mean,
        original_metrics=regression_metrics(y, base),
        perturbed_metrics=regression_metrics(y, mean),
        n_variants=n_variants,
    )
    logger.info("perturbation fold %s: r2 %.4f -> %.4f", checkpoint.fold,
                result.original_metrics.r2, result.perturbed_metrics.r2)
    return result
