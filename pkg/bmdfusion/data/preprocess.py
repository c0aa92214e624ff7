"""metadata standardization and one-hot encoding, fit on a training fold"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.preprocessing import OneHotEncoder, StandardScaler

from bmdfusion.config import CATEGORICAL_LEVELS, NUMERICAL_FIELDS, default_field_spec
from bmdfusion.errors import ParameterError, SchemaError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScalerParams:
    """train-fold statistics reused unchanged on the test fold"""

    mean: Tuple[float, ...]
    scale: Tuple[float, ...]
    fields: Tuple[str, ...] = NUMERICAL_FIELDS

    def to_dict(self) -> Dict:
        return {"mean": list(self.mean), "scale": list(self.scale), "fields": list(self.fields)}

    @classmethod
    def from_dict(cls, data: Dict) -> "ScalerParams":
        return cls(tuple(data["mean"]), tuple(data["scale"]), tuple(data["fields"]))


def _frame(samples) -> pd.DataFrame:
    rows = [s.metadata for s in samples]
    frame = pd.DataFrame(rows)
    missing = sorted((set(NUMERICAL_FIELDS) | set(CATEGORICAL_LEVELS)) - set(frame.columns))
    if missing and rows:
        raise SchemaError(f"metadata missing fields {missing}")
    return frame


def fit_scaler(samples) -> ScalerParams:
    """StandardScaler over the numerical fields; zero-variance columns keep scale 1"""
    if not samples:
        raise ParameterError("cannot fit a scaler on an empty training split")
    values = _frame(samples)[list(NUMERICAL_FIELDS)].to_numpy(dtype=np.float64)
    scaler = StandardScaler().fit(values)
    constant = np.ptp(values, axis=0) == 0.0
    for name in np.asarray(NUMERICAL_FIELDS)[constant]:
        logger.warning("field %s has zero variance on the training split; centering only", name)
    scale = np.where(constant, 1.0, scaler.scale_)
    return ScalerParams(tuple(float(m) for m in scaler.mean_), tuple(float(s) for s in scale))


def _encoder() -> OneHotEncoder:
    levels = [list(CATEGORICAL_LEVELS[name]) for name in CATEGORICAL_LEVELS]
    return OneHotEncoder(categories=levels, sparse_output=False, handle_unknown="error")


def transform_metadata(samples, scaler: ScalerParams) -> np.ndarray:
    """[n, input_dim]: standardized numericals, then one-hot categoricals, in field-spec order"""
    if not samples:
        return np.zeros((0, sum(w for _, w in default_field_spec())))
    frame = _frame(samples)
    numeric = frame[list(scaler.fields)].to_numpy(dtype=np.float64)
    numeric = (numeric - np.asarray(scaler.mean)) / np.asarray(scaler.scale)
    cats = frame[list(CATEGORICAL_LEVELS)].astype(str)
    encoder = _encoder()
    try:
        onehot = encoder.fit(cats).transform(cats)
    except ValueError as exc:
        raise SchemaError(f"unknown categorical level: {exc}") from exc
    return np.concatenate([numeric, onehot], axis=1)


def preprocess_metadata(manifest, train_ids: Sequence[str]):
    """(matrix for every manifest sample, field_spec, scaler fit on train_ids only)"""
    if not train_ids:
        raise ParameterError("train_ids must be non-empty")
    scaler = fit_scaler(manifest.subset(train_ids))
    return transform_metadata(manifest.samples, scaler), default_field_spec(), scaler


def images_array(samples: List, dtype=np.float64) -> np.ndarray:
    """[n, 1, H, W]"""
    return np.stack([s.image for s in samples])[:, None, :, :].astype(dtype)
