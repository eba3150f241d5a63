"""Sinusoidal lifting of sample positions and view directions.

Each input component x expands to (optionally x itself, then)
sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^{L-1} pi x), cos(2^{L-1} pi x).
Column order is fixed: all raw components first, then frequency-major
sin/cos pairs per component. Positions are expected pre-scaled into
roughly [-1, 1] by the dataset loader; directions are unit vectors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndtensor as nd


@dataclass(frozen=True)
class EncodingConfig:
    l_pos: int = 10
    l_dir: int = 4
    include_input: bool = True

    def __post_init__(self):
        if self.l_pos < 1 or self.l_dir < 1:
            raise ValueError("frequency counts must be >= 1")

    @property
    def pos_width(self) -> int:
        return encoded_width(3, self.l_pos, self.include_input)

    @property
    def dir_width(self) -> int:
        return encoded_width(3, self.l_dir, self.include_input)


def encoded_width(components: int, freqs: int, include_input: bool) -> int:
    return components * ((1 if include_input else 0) + 2 * freqs)


def positional_encode(p: np.ndarray, freqs: int, include_input: bool = True) -> np.ndarray:
    """Encode an (n, c) array to (n, c*(include_input + 2*freqs)) float32.

    Raises NumericInputError on NaN/inf input. Pure function; safe to call
    from any number of workers.
    """
    p = np.asarray(p, dtype=np.float32)
    if p.ndim == 1:
        p = p[None, :]
    if not np.isfinite(p).all():
        raise nd.NumericInputError("positional_encode: input contains NaN or infinity")
    cols = [p] if include_input else []
    for k in range(freqs):
        angle = (2.0**k * np.pi) * p.astype(np.float64)
        cols.append(np.sin(angle).astype(np.float32))
        cols.append(np.cos(angle).astype(np.float32))
    return np.concatenate(cols, axis=1)


def encode_tensor(p: nd.Tensor, freqs: int, include_input: bool = True) -> nd.Tensor:
    """Graph-aware encoding for gradient flow back to the raw coordinates.

    The rendering and training paths treat sample positions as constants,
    so they use positional_encode directly; this variant exists for the
    differentiability property of the encoding itself.
    """
    if not np.isfinite(p.values).all():
        raise nd.NumericInputError("encode_tensor: input contains NaN or infinity")
    parts = [p] if include_input else []
    for k in range(freqs):
        scaled = nd.scale_shift(p, float(2.0**k * np.pi))
        # sin(x) = cos(x - pi/2) is not in the op set; build from tanh-free
        # primitives: record custom nodes via the generic machinery below.
        parts.append(_sin(scaled))
        parts.append(_cos(scaled))
    out = parts[0]
    for extra in parts[1:]:
        out = nd.concat(out, extra)
    return out


def _sin(x: nd.Tensor) -> nd.Tensor:
    y = np.sin(x.values)
    out = nd.Tensor(y, dtype=y.dtype)
    cos_v = np.cos(x.values)

    def back(g):
        if x.requires_grad:
            x.accumulate_grad(g * cos_v)

    return nd._record("sin", out, (x,), back)


def _cos(x: nd.Tensor) -> nd.Tensor:
    y = np.cos(x.values)
    out = nd.Tensor(y, dtype=y.dtype)
    sin_v = np.sin(x.values)

    def back(g):
        if x.requires_grad:
            x.accumulate_grad(-g * sin_v)

    return nd._record("cos", out, (x,), back)
