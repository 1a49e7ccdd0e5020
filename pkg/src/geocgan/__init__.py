"""Geometry-aware training and latent-space diagnostics for conditional generators."""
__version__ = "0.1.0"
