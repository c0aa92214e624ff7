"""msgpack checkpoints carrying parameters, config hash and fold scaler"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import msgpack
import numpy as np

from bmdfusion.config import FusionModelConfig, config_hash
from bmdfusion.data.preprocess import ScalerParams
from bmdfusion.errors import CheckpointError, ConfigError
from bmdfusion.model.fusion import FusionRegressor

logger = logging.getLogger(__name__)

FORMAT = "bmdfusion-checkpoint/1"


@dataclass
class Checkpoint:
    config: FusionModelConfig
    params: Dict[str, np.ndarray]
    epoch: int
    val_loss: float
    scaler: ScalerParams
    field_spec: Tuple[Tuple[str, int], ...]
    fold: Optional[int] = None

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def build_model(self) -> FusionRegressor:
        """a model holding exactly the stored parameters"""
        model = FusionRegressor(self.config, rng=np.random.default_rng(0))
        model.load_state_dict(self.params)
        return model


def _pack_array(arr: np.ndarray) -> Dict:
    arr = np.ascontiguousarray(arr)
    return {"dtype": arr.dtype.str, "shape": list(arr.shape), "data": arr.tobytes()}


def _unpack_array(obj: Dict) -> np.ndarray:
    return np.frombuffer(obj["data"], dtype=np.dtype(obj["dtype"])).reshape(obj["shape"]).copy()


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": FORMAT,
        "config": ckpt.config.to_dict(),
        "config_hash": ckpt.config_hash,
        "epoch": int(ckpt.epoch),
        "val_loss": float(ckpt.val_loss),
        "fold": ckpt.fold,
        "scaler": ckpt.scaler.to_dict(),
        "field_spec": [list(f) for f in ckpt.field_spec],
        "params": {name: _pack_array(arr) for name, arr in sorted(ckpt.params.items())},
    }
    with open(path, "wb") as f:
        f.write(msgpack.packb(payload, use_bin_type=True))
    logger.debug("saved checkpoint %s (epoch %d, val loss %.6g)", path, ckpt.epoch, ckpt.val_loss)
    return path


def load_checkpoint(path, expected_hash: Optional[str] = None) -> Checkpoint:
    """raises CheckpointError when missing, malformed, or built from a different config"""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {path} not found")
    try:
        with open(path, "rb") as f:
            payload = msgpack.unpackb(f.read(), raw=False)
        if payload.get("format") != FORMAT:
            raise CheckpointError(f"{path}: unknown format {payload.get('format')!r}")
        cfg = FusionModelConfig.from_dict(payload["config"])
        params = {name: _unpack_array(obj) for name, obj in payload["params"].items()}
        ckpt = Checkpoint(
            config=cfg,
            params=params,
            epoch=int(payload["epoch"]),
            val_loss=float(payload["val_loss"]),
            scaler=ScalerParams.from_dict(payload["scaler"]),
            field_spec=tuple((name, int(width)) for name, width in payload["field_spec"]),
            fold=payload.get("fold"),
        )
    except CheckpointError:
        raise
    except (ValueError, KeyError, TypeError, AttributeError, ConfigError, msgpack.exceptions.UnpackException) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    if ckpt.config_hash != payload["config_hash"]:
        raise CheckpointError(f"{path}: stored config hash does not match its config")
    if expected_hash is not None and ckpt.config_hash != expected_hash:
        raise CheckpointError(
            f"{path}: config hash {ckpt.config_hash} differs from run config {expected_hash}"
        )
    return ckpt
