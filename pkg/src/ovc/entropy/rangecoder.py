"""Carry-less (Subbotin) range coder on a 64-bit register, byte-wise output.

Frequencies are integers summing to ``TOTAL`` = 2**16.  Both directions share
the same renormalisation rule, so after k symbols the decoder's (low, range)
equals the encoder's.
"""

from __future__ import annotations

PREC = 16
TOTAL = 1 << PREC
MASK = (1 << 64) - 1
TOP = 1 << 56
BOT = 1 << 40


class StreamError(ValueError):
    """Malformed, truncated or out-of-alphabet entropy-coded data."""


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = MASK
        self.out = bytearray()

    def encode(self, cum: int, freq: int):
        if freq <= 0 or cum < 0 or cum + freq > TOTAL:
            raise StreamError(f"invalid interval cum={cum} freq={freq}")
        r = self.range // TOTAL
        self.low += cum * r
        self.range = freq * r
        self._normalize()

    def _normalize(self):
        while True:
            if (self.low ^ (self.low + self.range)) < TOP:
                pass
            elif self.range < BOT:
                self.range = -self.low & (BOT - 1)
            else:
                return
            self.out.append(self.low >> 56)
            self.low = (self.low << 8) & MASK
            self.range = (self.range << 8) & MASK

    def finish(self) -> bytes:
        """Emit the shortest byte prefix that pins the final interval.

        The decoder pads missing bytes with zeros, so any V with trailing zero
        bytes inside [low, low + range) works.
        """
        low, hi = self.low, self.low + self.range
        for j in range(8, -1, -1):
            step = 1 << (8 * j)
            v = -(-low // step) * step
            if v < hi and v <= MASK:
                self.out += v.to_bytes(8, "big")[:8 - j]
                break
        data = bytes(self.out)
        self.out = bytearray()
        return data


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.padding = 0
        self.low = 0
        self.range = MASK
        self.code = 0
        for _ in range(8):
            self.code = (self.code << 8) | self._byte()

    def _byte(self) -> int:
        if self.pos < len(self.data):
            b = self.data[self.pos]
            self.pos += 1
            return b
        self.padding += 1
        if self.padding > 8:
            raise StreamError("entropy-coded payload exhausted")
        return 0

    def target(self) -> int:
        self._r = self.range // TOTAL
        f = (self.code - self.low) // self._r
        if not 0 <= f < TOTAL:
            raise StreamError("corrupt payload: code outside coding interval")
        return f

    def consume(self, cum: int, freq: int):
        r = self._r
        self.low += cum * r
        self.range = freq * r
        while True:
            if (self.low ^ (self.low + self.range)) < TOP:
                pass
            elif self.range < BOT:
                self.range = -self.low & (BOT - 1)
            else:
                return
            self.code = ((self.code << 8) | self._byte()) & MASK
            self.low = (self.low << 8) & MASK
            self.range = (self.range << 8) & MASK

    @property
    def bytes_consumed(self) -> int:
        return self.pos
