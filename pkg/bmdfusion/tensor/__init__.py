"""minimal dense-tensor engine with reverse-mode differentiation"""
from bmdfusion.tensor.core import TOLERANCES, GradTape, Tensor, grad_enabled, no_grad

__all__ = ["TOLERANCES", "GradTape", "Tensor", "grad_enabled", "no_grad"]
