"""the full regressor: encoders, fusion per mode, regression head"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from bmdfusion.config import FusionModelConfig
from bmdfusion.model.encoders import FieldTokenBatch, ImageEncoder, MetadataEncoder
from bmdfusion.model.layers import Linear, Module, dtype_of
from bmdfusion.model.xattn import AttentionTrace, CrossAttentionBranch, branch_forward, fuse_bidirectional
from bmdfusion.tensor import ops
from bmdfusion.tensor.core import Tensor

logger = logging.getLogger(__name__)

IMG_TO_META = "img_to_meta"
META_TO_IMG = "meta_to_img"


@dataclass
class ForwardResult:
    predictions: Tensor  # [batch]
    traces: Dict[str, AttentionTrace]


class FusionRegressor(Module):
    """predicts bmd from an image batch and a metadata matrix.

    Only the parts the fusion mode reads are allocated, so e.g. the concat
    variant carries no attention parameters and metadata_only no image encoder.
    """

    def __init__(self, cfg: FusionModelConfig, rng: Optional[np.random.Generator] = None, dtype=None):
        cfg.validate()
        self.cfg = cfg
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        dtype = dtype if dtype is not None else dtype_of(cfg.precision)
        self.dtype = np.dtype(dtype)
        mode = cfg.fusion_mode
        needs_image = mode != "metadata_only"
        needs_meta = mode != "image_only"
        self.image_encoder = ImageEncoder(cfg.image, rng, dtype) if needs_image else None
        self.metadata_encoder = MetadataEncoder(cfg.metadata, rng, dtype) if needs_meta else None
        self.branches = {}
        if mode in ("bidirectional", IMG_TO_META):
            self.branches[IMG_TO_META] = CrossAttentionBranch(cfg.img_to_meta, rng, dtype)
        if mode in ("bidirectional", META_TO_IMG):
            self.branches[META_TO_IMG] = CrossAttentionBranch(cfg.meta_to_img, rng, dtype)
        self.head = Linear(cfg.head_input_width, 1, rng, dtype)
        logger.debug("built %s model with %d parameters", mode, self.parameter_count())

    def embed(self, images: Tensor, meta: Tensor, mode: str = ops.EVAL,
              rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, Dict[str, AttentionTrace]]:
        """fused embedding [batch, head_input_width] and the attention traces"""
        fusion = self.cfg.fusion_mode
        img_tokens = self.image_encoder.encode(images, mode, rng) if self.image_encoder else None
        fields: Optional[FieldTokenBatch] = (
            self.metadata_encoder.encode(meta, mode, rng) if self.metadata_encoder else None
        )
        traces: Dict[str, AttentionTrace] = {}
        parts = []
        if fusion == "image_only":
            parts.append(ops.mean(img_tokens, axis=1))
        elif fusion == "metadata_only":
            parts.append(ops.mean(fields.tokens, axis=1))
        elif fusion == "concat":
            parts += [ops.mean(img_tokens, axis=1), ops.mean(fields.tokens, axis=1)]
        elif fusion == "bidirectional":
            fused, traces[IMG_TO_META], traces[META_TO_IMG] = fuse_bidirectional(
                img_tokens, fields.tokens, self.branches[IMG_TO_META], self.branches[META_TO_IMG],
                mode, rng, fields.field_names)
            parts.append(fused)
        elif fusion == IMG_TO_META:
            enhanced, traces[IMG_TO_META] = branch_forward(
                img_tokens, fields.tokens, self.branches[IMG_TO_META], mode, rng, fields.field_names)
            parts.append(enhanced)
        else:
            image_names = tuple(f"img_{i}" for i in range(img_tokens.shape[1]))
            enhanced, traces[META_TO_IMG] = branch_forward(
                fields.tokens, img_tokens, self.branches[META_TO_IMG], mode, rng, image_names)
            parts.append(enhanced)
        fused = parts[0] if len(parts) == 1 else ops.concat(parts, axis=-1)
        return fused, traces

    def forward(self, images: Tensor, meta: Tensor, mode: str = ops.EVAL,
                rng: Optional[np.random.Generator] = None) -> ForwardResult:
        fused, traces = self.embed(images, meta, mode, rng)
        hidden = ops.dropout(fused, self.cfg.head_dropout_p, mode, rng)
        out = self.head(hidden)
        return ForwardResult(ops.reshape(out, (out.shape[0],)), traces)

    __call__ = forward
