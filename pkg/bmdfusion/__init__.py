"""Bidirectional cross-attention fusion of radiograph and clinical-metadata
tokens for bone mineral density regression, with a numpy autodiff engine,
a synthetic cohort generator and cross-validated evaluation."""

__version__ = "0.1.0"
