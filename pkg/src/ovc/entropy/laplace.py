"""Quantized-Laplace probability model shared by rate estimation and coding.

A symbol ``v`` under (mu, b) has mass ``F(v + 1/2) - F(v - 1/2)`` where F is
the Laplace CDF.  For coding, the mass is frozen to 16-bit frequencies:

* window ``[c - K, c + K]`` around ``c = floor(mu + 1/2)`` with
  ``K = min(K_MAX, ceil(b * ln(P(c) * 2**16)) + 1)`` (beyond it every mass is
  below one frequency unit), plus two escape symbols carrying the tails;
* ``freq = max(1, rint(p * 2**16))`` per symbol, the rounding surplus or
  deficit absorbed by the most probable symbol;
* an escaped value's distance beyond the window is written as an
  Exp-Golomb code of order ``floor(log2 b)`` over equiprobable binary
  decisions.  Escapes only occur for values whose mass is below one
  frequency unit, or when ``K`` hits ``K_MAX``.

Tables are computed in float64 by one code path used by both directions.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .rangecoder import TOTAL, RangeDecoder, RangeEncoder, StreamError

ALPHABET_MIN = -(1 << 15)
ALPHABET_MAX = (1 << 15) - 1
P_FLOOR = 1.0 / TOTAL
LOG_SCALE_MIN, LOG_SCALE_MAX = -10.0, 10.0
B_MIN, B_MAX = math.exp(LOG_SCALE_MIN), math.exp(LOG_SCALE_MAX)
K_MAX = 2048
_HALF = TOTAL // 2


def laplace_cdf(x, mu, b):
    z = (np.asarray(x, dtype=np.float64) - mu) / b
    half_tail = 0.5 * np.exp(-np.abs(z))
    return np.where(z < 0, half_tail, 1.0 - half_tail)


def _mass_scalar(v: int, mu: float, b: float) -> float:
    lo, hi = (v - 0.5 - mu) / b, (v + 0.5 - mu) / b
    if lo >= 0:
        return 0.5 * math.exp(-lo) * -math.expm1(-1.0 / b)
    if hi <= 0:
        return 0.5 * math.exp(hi) * -math.expm1(-1.0 / b)
    return 1.0 - 0.5 * math.exp(lo) - 0.5 * math.exp(-hi)


def laplace_mass(v, mu, b):
    """P(v) = F(v + 1/2) - F(v - 1/2), evaluated without cancellation."""
    v = np.asarray(v, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    lo = (v - 0.5 - mu) / b
    hi = (v + 0.5 - mu) / b
    one_m_q = -np.expm1(-1.0 / b)
    right = 0.5 * np.exp(-np.maximum(lo, 0.0)) * one_m_q
    left = 0.5 * np.exp(np.minimum(hi, 0.0)) * one_m_q
    mid = 1.0 - 0.5 * np.exp(np.minimum(lo, 0.0)) - 0.5 * np.exp(-np.maximum(hi, 0.0))
    return np.where(lo >= 0, right, np.where(hi <= 0, left, mid))


def rate_bits(v, mu, b):
    """-log2 of the floored mass: the ideal code length of ``v``."""
    return -np.log2(np.maximum(laplace_mass(v, mu, b), P_FLOOR))


def clamp_scale(b: float) -> float:
    if not (b > 0.0) or math.isnan(b):
        raise StreamError(f"invalid Laplace scale {b!r}")
    return min(max(b, B_MIN), B_MAX)


def _freqs(p: np.ndarray) -> np.ndarray:
    f = np.maximum(1, np.rint(p * TOTAL)).astype(np.int64)
    top = int(np.argmax(f))
    f[top] += TOTAL - int(f.sum())
    if f[top] < 1:
        raise StreamError("probability table cannot be normalised")
    return f


def _cum(f: np.ndarray) -> np.ndarray:
    c = np.zeros(f.size + 1, dtype=np.int64)
    np.cumsum(f, out=c[1:])
    return c


def _window_radius(p_peak: float, b: float) -> int:
    # symbols further out have mass below one frequency unit
    return min(K_MAX, math.ceil(b * max(math.log(p_peak * TOTAL), 0.0)) + 1)


@lru_cache(maxsize=4096)
def _window_table(mu: float, b: float):
    c = math.floor(mu + 0.5)
    K = _window_radius(_mass_scalar(c, mu, b), b)
    edges = np.arange(c - K, c + K + 2, dtype=np.float64) - 0.5
    cdf = np.empty(2 * K + 4)
    cdf[0], cdf[-1] = 0.0, 1.0
    cdf[1:-1] = laplace_cdf(edges, mu, b)
    f = _freqs(np.diff(cdf))
    return c, K, _cum(f)


def _golomb_order(b: float) -> int:
    return max(0, int(math.floor(math.log2(b))))


def _encode_escape(enc: RangeEncoder, dist: int, k: int):
    # Exp-Golomb of order k over equiprobable binary decisions
    x = dist + (1 << k)
    n = x.bit_length() - 1 - k
    for _ in range(n):
        enc.encode(_HALF, _HALF)
    enc.encode(0, _HALF)
    rest = x - (1 << (n + k))
    for i in range(n + k - 1, -1, -1):
        enc.encode(((rest >> i) & 1) * _HALF, _HALF)


def _read_bit(dec: RangeDecoder) -> int:
    bit = 1 if dec.target() >= _HALF else 0
    dec.consume(bit * _HALF, _HALF)
    return bit


def _decode_escape(dec: RangeDecoder, k: int) -> int:
    n = 0
    while _read_bit(dec):
        n += 1
        if n > 17:
            raise StreamError("escape prefix exceeds the alphabet")
    rest = 0
    for _ in range(n + k):
        rest = (rest << 1) | _read_bit(dec)
    return (1 << (n + k)) + rest - (1 << k)


def _check_value(value: int):
    if not ALPHABET_MIN <= value <= ALPHABET_MAX:
        raise StreamError(f"value {value} outside [{ALPHABET_MIN}, {ALPHABET_MAX}]")


def encode_symbol(enc: RangeEncoder, value: int, mu: float, b: float):
    """Code one integer under the quantized Laplace(mu, b) model."""
    value = int(value)
    _check_value(value)
    mu, b = float(mu), clamp_scale(float(b))
    c, K, cum = _window_table(mu, b)
    if value < c - K:
        idx, dist = 0, c - K - 1 - value
    elif value > c + K:
        idx, dist = 2 * K + 2, value - (c + K + 1)
    else:
        idx, dist = value - (c - K) + 1, -1
    enc.encode(int(cum[idx]), int(cum[idx + 1] - cum[idx]))
    if dist >= 0:
        _encode_escape(enc, dist, _golomb_order(b))


def _lookup(cum: np.ndarray, f: int) -> int:
    return int(np.searchsorted(cum, f, side="right")) - 1


def decode_symbol(dec: RangeDecoder, mu: float, b: float) -> int:
    mu, b = float(mu), clamp_scale(float(b))
    c, K, cum = _window_table(mu, b)
    idx = _lookup(cum, dec.target())
    dec.consume(int(cum[idx]), int(cum[idx + 1] - cum[idx]))
    if 0 < idx < 2 * K + 2:
        return c - K + idx - 1
    dist = _decode_escape(dec, _golomb_order(b))
    value = c - K - 1 - dist if idx == 0 else c + K + 1 + dist
    _check_value(value)
    return value


def encode_values(values, mus, bs) -> bytes:
    enc = RangeEncoder()
    for v, m, s in zip(_flat(values), _flat(mus), _flat(bs)):
        encode_symbol(enc, v, m, s)
    return enc.finish()


def decode_values(data: bytes, mus, bs) -> np.ndarray:
    dec = RangeDecoder(data)
    out = [decode_symbol(dec, m, s) for m, s in zip(_flat(mus), _flat(bs))]
    return np.array(out, dtype=np.int64)


def _flat(x) -> list:
    return np.asarray(x).ravel().tolist()
