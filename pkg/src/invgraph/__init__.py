"""Invariant graph representation learning in a quantized latent space."""

__version__ = "0.1.0"
