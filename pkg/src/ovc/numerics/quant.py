"""Differentiable surrogates for rounding latents to integers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, make


@dataclass(frozen=True)
class QuantizerMode:
    """One of ``noise`` (additive uniform), ``softround`` or ``hard`` (STE)."""

    kind: str = "hard"
    amplitude: float = 1.0
    temperature: float = 0.3

    def __post_init__(self):
        if self.kind not in ("noise", "softround", "hard"):
            raise ValueError(f"unknown quantizer kind {self.kind!r}")
        if not 0.0 <= self.amplitude <= 1.0:
            raise ValueError(f"noise amplitude {self.amplitude} outside [0, 1]")
        if not self.temperature > 0.0:
            raise ValueError(f"softround temperature must be > 0, got {self.temperature}")

    @classmethod
    def noise(cls, amplitude: float) -> "QuantizerMode":
        return cls("noise", amplitude=amplitude)

    @classmethod
    def softround(cls, temperature: float) -> "QuantizerMode":
        return cls("softround", temperature=temperature)

    @classmethod
    def hard(cls) -> "QuantizerMode":
        return cls("hard")


HARD = QuantizerMode.hard()


def softround_np(x: np.ndarray, T: float) -> np.ndarray:
    fl = np.floor(x)
    return fl + 0.5 * np.tanh((x - fl - 0.5) / T) / np.tanh(0.5 / T) + 0.5


def softround(x: Tensor, T: float) -> Tensor:
    xd = x.data.astype(np.float64)
    fl = np.floor(xd)
    z = (xd - fl - 0.5) / T
    th = np.tanh(z)
    norm = np.tanh(0.5 / T)
    out = (fl + 0.5 * th / norm + 0.5).astype(x.data.dtype)
    dt = x.data.dtype

    def back(g):
        return ((g * (0.5 / (T * norm)) * (1.0 - th * th)).astype(dt),)

    return make(out, (x,), back)


def round_ste(x: Tensor) -> Tensor:
    return make(np.rint(x.data), (x,), lambda g: (g,))


def quantize(x: Tensor, mode: QuantizerMode, rng: np.random.Generator | None = None) -> Tensor:
    if mode.kind == "hard":
        return round_ste(x)
    if mode.kind == "softround":
        return softround(x, mode.temperature)
    if rng is None:
        raise ValueError("additive-noise quantization needs an explicit generator")
    a = mode.amplitude
    u = rng.uniform(-a / 2, a / 2, size=x.shape).astype(x.data.dtype)
    return x + u
