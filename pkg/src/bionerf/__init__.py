"""Differentiable volume rendering with a memory-gated radiance field."""

__version__ = "0.1.0"
