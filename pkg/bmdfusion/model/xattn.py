"""bidirectional multi-layer cross-attention with head-shared fusion weights.

One branch takes queries from one modality and keys/values from the other.
Every layer splits the projections into heads, applies softmax attention over
the key tokens, scales the aggregated values by the layer's fusion weight and
recombines the heads through an output projection. Between layers the
key/value tokens are refined by a residual updater.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from bmdfusion.config import CrossAttentionBranchConfig
from bmdfusion.errors import ConfigError, DimensionError
from bmdfusion.model.layers import LayerNorm, Linear, Module, Parameter, WEIGHT, fan_in_uniform, scalar_parameter
from bmdfusion.tensor import ops
from bmdfusion.tensor.core import Tensor


class AttentionLayer(Module):
    """projections and fusion weight of one cross-attention layer"""

    def __init__(self, cfg: CrossAttentionBranchConfig, rng: np.random.Generator, dtype=np.float64):
        dq, dk = cfg.query_dim, cfg.kv_dim
        self.w_q = Parameter(fan_in_uniform(rng, (dq, dq), dq, dtype), WEIGHT)
        self.w_k = Parameter(fan_in_uniform(rng, (dk, dq), dk, dtype), WEIGHT)
        self.w_v = Parameter(fan_in_uniform(rng, (dk, dq), dk, dtype), WEIGHT)
        self.w_o = Linear(dq, dq, rng, dtype)
        self.fusion_weight = scalar_parameter(1.0, dtype)


class KVUpdater(Module):
    """LayerNorm -> Linear -> GELU -> Dropout, added back at a fixed scale"""

    def __init__(self, cfg: CrossAttentionBranchConfig, rng: np.random.Generator, dtype=np.float64):
        self.norm = LayerNorm(cfg.kv_dim, dtype)
        self.linear = Linear(cfg.kv_dim, cfg.kv_dim, rng, dtype)
        self.dropout_p = cfg.updater_dropout_p
        self.residual_scale = cfg.updater_residual_scale


class CrossAttentionBranch(Module):
    """n_layers attention layers; updaters sit between consecutive layers"""

    def __init__(self, cfg: CrossAttentionBranchConfig, rng: np.random.Generator, dtype=np.float64):
        cfg.validate()
        self.cfg = cfg
        self.layers = [AttentionLayer(cfg, rng, dtype) for _ in range(cfg.n_layers)]
        # keys/values refined after the last layer are never read again
        self.updaters = [KVUpdater(cfg, rng, dtype) for _ in range(cfg.n_layers - 1)]

    def __call__(self, x: Tensor, y: Tensor, mode: str = ops.EVAL,
                 rng: Optional[np.random.Generator] = None,
                 key_names: Sequence[str] = ()) -> Tuple[Tensor, "AttentionTrace"]:
        return branch_forward(x, y, self, mode, rng, key_names)


@dataclass
class AttentionTrace:
    """attention weights of one branch call, one [batch, heads, Tq, Tk] array per layer"""

    layers: List[np.ndarray] = field(default_factory=list)
    key_names: Tuple[str, ...] = ()

    def head_mean(self, layer: int) -> np.ndarray:
        """[batch, Tq, Tk] averaged over heads"""
        return self.layers[layer].mean(axis=1)

    def layer_mean(self) -> np.ndarray:
        """[batch, Tq, Tk] averaged over heads and layers"""
        return np.mean([w.mean(axis=1) for w in self.layers], axis=0)

    def field_attention(self, layer: Optional[int] = None) -> np.ndarray:
        """[batch, Tk]: attention each key token receives, averaged over queries"""
        weights = self.layer_mean() if layer is None else self.head_mean(layer)
        return weights.mean(axis=1)


def _split_heads(t: Tensor, n_heads: int) -> Tensor:
    b, tokens, width = t.shape
    return ops.transpose(ops.reshape(t, (b, tokens, n_heads, width // n_heads)), (0, 2, 1, 3))


def project_qkv(x: Tensor, y: Tensor, layer: AttentionLayer, n_heads: int) -> Tuple[Tensor, Tensor, Tensor]:
    """Q = X W_Q, K = Y W_K, V = Y W_V, each split into [b, h, T, head_dim]"""
    dq, dk = layer.w_q.shape[0], layer.w_k.shape[0]
    if x.ndim != 3 or y.ndim != 3 or x.shape[-1] != dq or y.shape[-1] != dk or x.shape[0] != y.shape[0]:
        raise ConfigError(
            f"cross-attention expects queries [b, Tq, {dq}] and keys [b, Tk, {dk}], "
            f"got {x.shape} and {y.shape}"
        )
    if dq % n_heads:
        raise ConfigError(f"query_dim {dq} not divisible by {n_heads} heads")
    q = _split_heads(ops.matmul(x, layer.w_q), n_heads)
    k = _split_heads(ops.matmul(y, layer.w_k), n_heads)
    v = _split_heads(ops.matmul(y, layer.w_v), n_heads)
    return q, k, v


def attention_scores(q: Tensor, k: Tensor) -> Tensor:
    """Q K^T / sqrt(head_dim), [b, h, Tq, Tk]"""
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"attention_scores: head dims differ {q.shape} vs {k.shape}")
    return ops.mul_scalar(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(q.shape[-1]))


def head_output(weights: Tensor, v: Tensor, fusion_weight: Tensor) -> Tensor:
    """weights @ V scaled by the layer's shared scalar, [b, h, Tq, head_dim]"""
    return ops.scale(ops.matmul(weights, v), fusion_weight)


def layer_output(heads: Tensor, w_o: Linear, n_heads: int) -> Tensor:
    """concatenates heads along the feature axis and applies W^(l), [b, Tq, dq]"""
    if heads.ndim != 4 or heads.shape[1] != n_heads:
        raise DimensionError(f"layer_output: expected {n_heads} heads, got shape {heads.shape}")
    b, h, tq, hd = heads.shape
    merged = ops.reshape(ops.transpose(heads, (0, 2, 1, 3)), (b, tq, h * hd))
    return w_o(merged)


def kv_update(y: Tensor, updater: KVUpdater, mode: str = ops.EVAL,
              rng: Optional[np.random.Generator] = None) -> Tensor:
    """Y + scale * Dropout(GELU(Linear(LayerNorm(Y))))"""
    refined = ops.gelu(updater.linear(updater.norm(y)))
    refined = ops.dropout(refined, updater.dropout_p, mode, rng)
    return ops.add(y, ops.mul_scalar(refined, updater.residual_scale))


def branch_forward(x: Tensor, y: Tensor, branch: CrossAttentionBranch, mode: str = ops.EVAL,
                   rng: Optional[np.random.Generator] = None,
                   key_names: Sequence[str] = ()) -> Tuple[Tensor, AttentionTrace]:
    """runs every layer and mean-pools the final queries to [b, query_dim]"""
    n_heads = branch.cfg.n_heads
    trace = AttentionTrace(key_names=tuple(key_names))
    for i, layer in enumerate(branch.layers):
        q, k, v = project_qkv(x, y, layer, n_heads)
        weights = ops.softmax(attention_scores(q, k), axis=-1)
        trace.layers.append(weights.data.copy())
        x = layer_output(head_output(weights, v, layer.fusion_weight), layer.w_o, n_heads)
        if i < len(branch.updaters):
            y = kv_update(y, branch.updaters[i], mode, rng)
    return ops.mean(x, axis=1), trace


def fuse_bidirectional(img_tokens: Tensor, meta_tokens: Tensor,
                       img_to_meta: CrossAttentionBranch, meta_to_img: CrossAttentionBranch,
                       mode: str = ops.EVAL, rng: Optional[np.random.Generator] = None,
                       field_names: Sequence[str] = ()) -> Tuple[Tensor, AttentionTrace, AttentionTrace]:
    """[b, d_i + d_m]: enhanced image embedding followed by enhanced metadata embedding"""
    image_names = tuple(f"img_{i}" for i in range(img_tokens.shape[1]))
    img_enh, img_trace = branch_forward(img_tokens, meta_tokens, img_to_meta, mode, rng, field_names)
    meta_enh, meta_trace = branch_forward(meta_tokens, img_tokens, meta_to_img, mode, rng, image_names)
    return ops.concat([img_enh, meta_enh], axis=-1), img_trace, meta_trace
