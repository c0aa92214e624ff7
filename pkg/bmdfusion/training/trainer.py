"""single-fold training with best-validation checkpointing"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from bmdfusion.config import AugmentationPolicy, FusionModelConfig
from bmdfusion.data.augment import expand_training_set
from bmdfusion.data.preprocess import ScalerParams, fit_scaler, images_array, transform_metadata
from bmdfusion.errors import NumericalError, ParameterError
from bmdfusion.losses import configured_loss, l1_penalty
from bmdfusion.model.fusion import FusionRegressor
from bmdfusion.model.xattn import AttentionTrace
from bmdfusion.tensor import ops
from bmdfusion.tensor.core import Tensor, no_grad
from bmdfusion.training.checkpoint import Checkpoint
from bmdfusion.training.optim import AdamState, adam_step

logger = logging.getLogger(__name__)


@dataclass
class SplitArrays:
    """model-ready arrays for one split"""

    ids: List[str]
    images: np.ndarray  # [n, 1, H, W]
    meta: np.ndarray  # [n, input_dim]
    y: np.ndarray  # [n]

    def __len__(self) -> int:
        return len(self.ids)

    def take(self, idx) -> "SplitArrays":
        idx = np.asarray(idx)
        return SplitArrays([self.ids[i] for i in idx], self.images[idx], self.meta[idx], self.y[idx])


def split_arrays(samples, scaler: ScalerParams, dtype=np.float64) -> SplitArrays:
    return SplitArrays(
        ids=[s.id for s in samples],
        images=images_array(samples, dtype),
        meta=transform_metadata(samples, scaler).astype(dtype),
        y=np.array([s.bmd for s in samples], dtype=dtype),
    )


@dataclass
class History:
    epoch: List[int] = field(default_factory=list)
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)

    def record(self, epoch: int, train_loss: float, val_loss: float) -> None:
        self.epoch.append(epoch)
        self.train_loss.append(train_loss)
        self.val_loss.append(val_loss)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"epoch": self.epoch, "train_loss": self.train_loss, "val_loss": self.val_loss})


@dataclass
class FitResult:
    history: History
    best_epoch: int
    best_val_loss: float
    best_params: Dict[str, np.ndarray]


@dataclass
class FoldResult:
    fold: int
    checkpoint: Checkpoint
    history: History
    test_ids: List[str]
    y_true: np.ndarray
    y_pred: np.ndarray


def predict(model: FusionRegressor, images: np.ndarray, meta: np.ndarray, batch_size: int = 8,
            with_traces: bool = False) -> Tuple[np.ndarray, List[Dict[str, AttentionTrace]]]:
    """eval-mode predictions in fixed order and batches of batch_size"""
    if batch_size < 1:
        raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
    preds, traces = [], []
    with no_grad():
        for start in range(0, len(images), batch_size):
            stop = start + batch_size
            out = model.forward(Tensor(images[start:stop], dtype=model.dtype),
                                Tensor(meta[start:stop], dtype=model.dtype), ops.EVAL)
            preds.append(out.predictions.numpy())
            if with_traces:
                traces.append(out.traces)
    y = np.concatenate(preds) if preds else np.zeros(0, dtype=model.dtype)
    return y, traces


def evaluate_loss(model: FusionRegressor, split: SplitArrays, loss_fn, batch_size: int) -> float:
    preds, _ = predict(model, split.images, split.meta, batch_size)
    with no_grad():
        return float(loss_fn(split.y, Tensor(preds)).item())


def fit_arrays(model: FusionRegressor, train: SplitArrays, val: SplitArrays, cfg: FusionModelConfig,
               rng: np.random.Generator, epochs: Optional[int] = None) -> FitResult:
    """adam over shuffled minibatches; keeps the parameters with the lowest validation loss.

    The initial parameters are the candidate to beat, so the kept loss is never
    above any recorded epoch.
    """
    epochs = cfg.epochs if epochs is None else epochs
    loss_fn = configured_loss(cfg.loss, cfg.wsl1)
    params = model.parameters()
    state = AdamState()
    history = History()
    best_val = evaluate_loss(model, val, loss_fn, cfg.eval_batch)
    best_epoch, best_params = 0, model.state_dict()
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train))
        total = 0.0
        for b, start in enumerate(range(0, len(train), cfg.train_batch)):
            batch = train.take(order[start:start + cfg.train_batch])
            model.zero_grad()
            out = model.forward(Tensor(batch.images), Tensor(batch.meta), ops.TRAIN, rng)
            data_loss = loss_fn(batch.y, out.predictions)
            loss = data_loss
            if cfg.optimizer.l1 > 0:
                loss = ops.add(data_loss, l1_penalty(params, cfg.optimizer.l1))
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(f"non-finite loss {value} at epoch {epoch}, batch {b}")
            loss.backward()
            adam_step(params, [p.grad for p in params], state, cfg.optimizer)
            total += data_loss.item() * len(batch)
        train_loss = total / len(train)
        val_loss = evaluate_loss(model, val, loss_fn, cfg.eval_batch)
        history.record(epoch, train_loss, val_loss)
        logger.debug("epoch %d train %.6g val %.6g", epoch, train_loss, val_loss)
        if val_loss < best_val:
            best_val, best_epoch, best_params = val_loss, epoch, model.state_dict()
    return FitResult(history, best_epoch, best_val, best_params)


def train_fold(manifest, plan, fold: int, cfg: FusionModelConfig,
               policy: Optional[AugmentationPolicy] = None, augment_seed: Optional[int] = None) -> FoldResult:
    """trains one fold on its augmented training split, validating on the held-out split"""
    cfg.validate()
    policy = policy or AugmentationPolicy.training()
    train_records = manifest.subset(plan.train_ids(fold))
    test_records = manifest.subset(plan.test_ids(fold))
    scaler = fit_scaler(train_records)
    expanded = expand_training_set(manifest, plan, fold, policy,
                                   seed=cfg.seed if augment_seed is None else augment_seed)
    model = FusionRegressor(cfg, rng=np.random.default_rng([cfg.seed, fold]))
    train = split_arrays(expanded, scaler, model.dtype)
    test = split_arrays(test_records, scaler, model.dtype)
    logger.info("fold %d: %s, %d train (%d after augmentation), %d test",
                fold, cfg.fusion_mode, len(train_records), len(train), len(test))

    fit = fit_arrays(model, train, test, cfg, np.random.default_rng([cfg.seed, fold, 1]))
    model.load_state_dict(fit.best_params)
    y_pred, _ = predict(model, test.images, test.meta, cfg.eval_batch)
    checkpoint = Checkpoint(
        config=cfg,
        params=fit.best_params,
        epoch=fit.best_epoch,
        val_loss=fit.best_val_loss,
        scaler=scaler,
        field_spec=cfg.metadata.field_spec,
        fold=fold,
    )
    logger.info("fold %d: best epoch %d, val loss %.6g", fold, fit.best_epoch, fit.best_val_loss)
    return FoldResult(fold, checkpoint, fit.history, test.ids, test.y.astype(np.float64),
                      y_pred.astype(np.float64))


def held_out_split(manifest, plan, fold: int, checkpoint: Checkpoint) -> SplitArrays:
    """a fold's held-out split, scaled with the checkpoint's stored statistics"""
    dtype = np.float32 if checkpoint.config.precision == "float32" else np.float64
    return split_arrays(manifest.subset(plan.test_ids(fold)), checkpoint.scaler, dtype)
