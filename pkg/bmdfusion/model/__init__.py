from bmdfusion.model.encoders import FieldTokenBatch, ImageEncoder, MetadataEncoder
from bmdfusion.model.fusion import ForwardResult, FusionRegressor
from bmdfusion.model.layers import Module, Parameter
from bmdfusion.model.xattn import AttentionTrace, CrossAttentionBranch

__all__ = [
    "AttentionTrace", "CrossAttentionBranch", "FieldTokenBatch", "ForwardResult",
    "FusionRegressor", "ImageEncoder", "MetadataEncoder", "Module", "Parameter",
]
