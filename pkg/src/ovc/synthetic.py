"""Synthetic test sequences: smooth random textures, panned or held still."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .video.pipeline import to_samples


def texture(seed: int, h: int, w: int):
    """Luma in [0, 1] with two detail scales, and a low-frequency chroma field."""
    r = np.random.default_rng(seed)
    y = ndimage.gaussian_filter(r.random((h, w)), 3.0)
    y += 0.5 * ndimage.gaussian_filter(r.random((h, w)), 1.0)
    y = (y - y.min()) / (y.max() - y.min())
    u = ndimage.gaussian_filter(r.random((h, w)), 6.0)
    u = 0.35 + 0.3 * (u - u.min()) / (u.max() - u.min())
    return y, u


def _planes(y, u, bit_depth):
    return to_samples((y, u[::2, ::2], 1 - u[1::2, 1::2]), bit_depth)


def moving_sequence(n: int, size: int, step: int = 4, seed: int = 0, bit_depth: int = 8) -> list:
    """Global pan: each frame moves ``step`` px right and ``step // 2`` px down."""
    pad = step * n + 8
    y, u = texture(seed, size + pad, size + pad)
    out = []
    for t in range(n):
        dx, dy = step * t, (step // 2) * t
        out.append(_planes(y[dy:dy + size, dx:dx + size], u[dy:dy + size, dx:dx + size], bit_depth))
    return out


def static_sequence(n: int, size: int, seed: int = 0, bit_depth: int = 8) -> list:
    y, u = texture(seed, size, size)
    f = _planes(y, u, bit_depth)
    return [tuple(p.copy() for p in f) for _ in range(n)]
