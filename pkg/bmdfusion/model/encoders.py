"""modality encoders producing token sequences for the attention branches"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from bmdfusion.config import ImageEncoderConfig, MetadataEncoderConfig
from bmdfusion.errors import SchemaError, shape_mismatch
from bmdfusion.model.layers import Conv2d, Linear, Module
from bmdfusion.tensor import ops
from bmdfusion.tensor.core import Tensor


@dataclass
class FieldTokenBatch:
    """one token per clinical field; field_names[i] labels tokens[:, i, :]"""

    tokens: Tensor
    field_names: Tuple[str, ...]

    def __post_init__(self):
        if self.tokens.shape[1] != len(self.field_names):
            raise shape_mismatch("field tokens vs names", self.tokens.shape, (len(self.field_names),))


class ImageEncoder(Module):
    """conv blocks -> grid pooling into N_img tokens -> shared projection per token"""

    def __init__(self, cfg: ImageEncoderConfig, rng: np.random.Generator, dtype=np.float64):
        cfg.validate()
        self.cfg = cfg
        channels = (1,) + tuple(cfg.conv_channels)
        self.convs = [
            Conv2d(channels[i], channels[i + 1], cfg.kernel_sizes[i], rng, dtype)
            for i in range(len(cfg.conv_channels))
        ]
        self.feature_head = Conv2d(channels[-1], cfg.pooled_feature_dim, 1, rng, dtype)
        self.projection = Linear(cfg.pooled_feature_dim, cfg.projection_dim, rng, dtype)

    def feature_map(self, images: Tensor) -> Tensor:
        size = self.cfg.image_size
        if images.ndim != 4 or images.shape[1:] != (1, size, size):
            raise shape_mismatch("encode_image", images.shape, (None, 1, size, size))
        x = images
        for conv in self.convs:
            x = ops.avg_pool2d(ops.relu(conv(x)), 2)
        return ops.relu(self.feature_head(x))

    def encode(self, images: Tensor, mode: str = ops.EVAL,
               rng: Optional[np.random.Generator] = None) -> Tensor:
        """[batch, 1, H, W] -> [batch, N_img, d_i]"""
        fmap = self.feature_map(images)
        b, p, side, _ = fmap.shape
        grid = self.cfg.grid_side
        pooled = ops.avg_pool2d(fmap, side // grid)  # [b, P, grid, grid]
        tokens = ops.transpose(ops.reshape(pooled, (b, p, grid * grid)), (0, 2, 1))
        tokens = ops.relu(self.projection(tokens))
        return ops.dropout(tokens, self.cfg.dropout_p, mode, rng)


class MetadataEncoder(Module):
    """field-specific embeddings refined by a shared two-layer mlp"""

    def __init__(self, cfg: MetadataEncoderConfig, rng: np.random.Generator, dtype=np.float64):
        cfg.validate()
        self.cfg = cfg
        self.field = {name: Linear(width, cfg.embed_dim, rng, dtype) for name, width in cfg.field_spec}
        self.hidden = Linear(cfg.embed_dim, cfg.hidden_dim, rng, dtype)
        self.out = Linear(cfg.hidden_dim, cfg.embed_dim, rng, dtype)

    def embed_fields(self, meta: Tensor) -> Tensor:
        """per-field linear maps only, before the shared mlp: [batch, F, d_m]"""
        if meta.ndim != 2 or meta.shape[1] != self.cfg.input_dim:
            expected = ", ".join(f"{n}({w})" for n, w in self.cfg.field_spec)
            raise SchemaError(
                f"metadata has {meta.shape[-1] if meta.ndim else 0} columns, "
                f"expected {self.cfg.input_dim}: {expected}"
            )
        b = meta.shape[0]
        tokens, offset = [], 0
        for name, width in self.cfg.field_spec:
            part = ops.slice_axis(meta, offset, offset + width, axis=1)
            tokens.append(ops.reshape(self.field[name](part), (b, 1, self.cfg.embed_dim)))
            offset += width
        return ops.concat(tokens, axis=1)

    def encode(self, meta: Tensor, mode: str = ops.EVAL,
               rng: Optional[np.random.Generator] = None) -> FieldTokenBatch:
        tokens = self.embed_fields(meta)
        hidden = ops.dropout(ops.relu(self.hidden(tokens)), self.cfg.dropout_p, mode, rng)
        return FieldTokenBatch(self.out(hidden), self.cfg.field_names)
