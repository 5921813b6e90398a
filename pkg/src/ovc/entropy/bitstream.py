"""GOP container: header, per-frame records, quantized parameters, latent payloads.

Layout is documented in FORMAT.md.  Every multi-byte field is little-endian;
the header and each frame record carry a CRC-32 so a damaged byte is reported
instead of silently decoding to different content.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..coolchic import (
    ARCHITECTURES,
    QuantizedTensor,
    CoolChicDecoder,
    coding_distribution,
    context_index,
    fixed_point_arm,
    param_shapes,
    pyramid_layout,
)
from .laplace import B_MIN, decode_symbol, encode_symbol
from .rangecoder import RangeDecoder, RangeEncoder, StreamError

MAGIC = b"OVCV"
VERSION = 1
FRAME_KINDS = {"I": 0, "P": 1, "B": 2}
NO_REF = 0xFFFF
_HEADER = struct.Struct("<4sBHHBHBBf")
_FRAME = struct.Struct("<HBHH")


class FormatError(ValueError):
    """Bitstream container damage: bad magic/version, length or CRC mismatch."""


def padded_size(n: int, multiple: int = 64) -> int:
    return -(-n // multiple) * multiple


@dataclass
class GopHeader:
    width: int
    height: int
    bit_depth: int
    n_frames: int
    gop_id: int
    lambda_index: int
    lam: float

    @property
    def coded_height(self) -> int:
        return padded_size(self.height)

    @property
    def coded_width(self) -> int:
        return padded_size(self.width)


@dataclass
class DecoderPayload:
    kind: str  # coolchic architecture kind
    qparams: dict  # name -> QuantizedTensor
    latents: np.ndarray  # flat int64 in pyramid layout order


@dataclass
class FrameRecord:
    index: int
    kind: str  # I / P / B
    refs: tuple
    decoders: list  # DecoderPayload; I: [intra], P/B: [motion, residue]


@dataclass
class FrameStats:
    index: int
    total_bytes: int = 0
    motion_bytes: int = 0
    residue_bytes: int = 0
    param_bytes: int = 0
    latent_bytes: int = 0

    @property
    def overhead_bytes(self) -> int:
        return self.total_bytes - self.motion_bytes - self.residue_bytes


@dataclass
class GopStats:
    header_bytes: int
    frames: list = field(default_factory=list)

    @property
    def total_bytes(self) -> int:
        return self.header_bytes + sum(f.total_bytes for f in self.frames)


def decoder_kinds(frame_kind: str) -> list:
    if frame_kind == "I":
        return ["intra"]
    return ["motion_p" if frame_kind == "P" else "motion_b", "residue"]


# -- varints -----------------------------------------------------------
def _put_varint(out: bytearray, n: int):
    while True:
        b = n & 0x7F
        n >>= 7
        out.append(b | (0x80 if n else 0))
        if not n:
            return


class _Reader:
    def __init__(self, data: bytes, pos: int = 0, end: int | None = None):
        self.data, self.pos = data, pos
        self.end = len(data) if end is None else end

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > self.end:
            raise FormatError(f"section of {n} bytes overruns the record at byte {self.pos}")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, st):
        return st.unpack(self.take(st.size))

    def varint(self) -> int:
        n, shift = 0, 0
        while True:
            b = self.take(1)[0]
            n |= (b & 0x7F) << shift
            if not b & 0x80:
                return n
            shift += 7
            if shift > 35:
                raise FormatError("varint too long")


# -- parameters --------------------------------------------------------
def _param_scale(qt: QuantizedTensor) -> float:
    return float(np.float16(qt.scale))


def _coding_scale(s16: float) -> float:
    return max(s16, B_MIN)


def _encode_params(kind: str, qparams: dict) -> bytes:
    out = bytearray()
    enc = RangeEncoder()
    for name, shape in param_shapes(kind):
        qt = qparams[name]
        if qt.values.shape != shape:
            raise FormatError(f"{kind}.{name}: shape {qt.values.shape} != {shape}")
        s = _param_scale(qt)
        out += struct.pack("<Be", qt.exponent, s)
        b = _coding_scale(s)
        for v in qt.values.ravel().tolist():
            encode_symbol(enc, v, 0.0, b)
    payload = enc.finish()
    _put_varint(out, len(payload))
    return bytes(out) + payload


def _decode_params(kind: str, r: _Reader) -> dict:
    heads = []
    for name, shape in param_shapes(kind):
        e, s = r.unpack(struct.Struct("<Be"))
        if not 0 <= e <= 30 or not math.isfinite(s) or s < 0:
            raise FormatError(f"{kind}.{name}: invalid step exponent {e} or scale {s}")
        heads.append((name, shape, e, float(s)))
    payload = r.take(r.varint())
    dec = RangeDecoder(payload)
    out = {}
    for name, shape, e, s in heads:
        b = _coding_scale(s)
        vals = [decode_symbol(dec, 0.0, b) for _ in range(int(np.prod(shape)))]
        out[name] = QuantizedTensor(e, np.array(vals, dtype=np.int64).reshape(shape))
    if dec.bytes_consumed > len(payload):
        raise FormatError("parameter payload over-read")
    return out


# -- latents -----------------------------------------------------------
def encode_latents(kind: str, H: int, W: int, qparams: dict, latents: np.ndarray) -> list:
    """One range-coded payload per active pyramid level."""
    arch = ARCHITECTURES[kind]
    lay = pyramid_layout(H, W, arch.levels)
    vals = np.asarray(latents, dtype=np.int64)
    if vals.shape != (lay.total,):
        raise FormatError(f"{kind}: {vals.size} latents for a layout of {lay.total}")
    dec = CoolChicDecoder(arch, H, W)
    mu, ls = coding_distribution(dec, qparams, vals)
    out = []
    for i in range(len(lay.levels)):
        sl = lay.level_slice(i)
        enc = RangeEncoder()
        for v, m, s in zip(vals[sl].tolist(), mu[sl].tolist(), ls[sl].tolist()):
            encode_symbol(enc, v, m, math.exp(s))
        out.append(enc.finish())
    return out


def decode_latents(kind: str, H: int, W: int, qparams: dict, payloads: list) -> np.ndarray:
    """Sequential ARM decoding: each latent's context is already decoded."""
    arch = ARCHITECTURES[kind]
    lay = pyramid_layout(H, W, arch.levels)
    idx = context_index(H, W, arch.levels, arch.context_size)
    n_layers = len(arch.arm)
    flat = np.zeros(lay.total + 1, dtype=np.int64)
    for i, payload in enumerate(payloads):
        dec = RangeDecoder(payload)
        sl = lay.level_slice(i)
        for p in range(sl.start, sl.stop):
            mu, s = fixed_point_arm(qparams, n_layers, flat[idx[p]][None])
            flat[p] = decode_symbol(dec, float(mu[0]), math.exp(float(s[0])))
        if dec.bytes_consumed > len(payload):
            raise FormatError(f"latent payload of level {lay.levels[i]} over-read")
    return flat[:-1]


# -- container ---------------------------------------------------------
def _encode_decoder(p: DecoderPayload, H: int, W: int, st: FrameStats) -> bytes:
    params = _encode_params(p.kind, p.qparams)
    out = bytearray(params)
    for payload in encode_latents(p.kind, H, W, p.qparams, p.latents):
        _put_varint(out, len(payload))
        out += payload
    st.param_bytes += len(params)
    st.latent_bytes += len(out) - len(params)
    return bytes(out)


def write_gop(header: GopHeader, records: list):
    """Serialise a GOP; returns (bytes, GopStats) with exact byte accounting."""
    header.lam = float(np.float32(header.lam))
    if len(records) != header.n_frames:
        raise FormatError(f"header announces {header.n_frames} frames, got {len(records)}")
    H, W = header.coded_height, header.coded_width
    head = _HEADER.pack(MAGIC, VERSION, header.width, header.height, header.bit_depth,
                        header.n_frames, header.gop_id, header.lambda_index, header.lam)
    head += struct.pack("<I", zlib.crc32(head))
    out = bytearray(head)
    stats = GopStats(len(head))
    for rec in records:
        st = FrameStats(rec.index)
        refs = tuple(rec.refs) + (NO_REF,) * (2 - len(rec.refs))
        body = bytearray(_FRAME.pack(rec.index, FRAME_KINDS[rec.kind], *refs))
        want = decoder_kinds(rec.kind)
        if [d.kind for d in rec.decoders] != want:
            raise FormatError(f"frame {rec.index}: decoders {[d.kind for d in rec.decoders]}, expected {want}")
        for d in rec.decoders:
            sec = _encode_decoder(d, H, W, st)
            if d.kind.startswith("motion"):
                st.motion_bytes += len(sec)
            else:
                st.residue_bytes += len(sec)
            body += sec
        body += struct.pack("<I", zlib.crc32(body))
        rec_bytes = struct.pack("<I", len(body)) + body
        st.total_bytes = len(rec_bytes)
        out += rec_bytes
        stats.frames.append(st)
    return bytes(out), stats


def read_header(data: bytes) -> tuple:
    n = _HEADER.size
    if len(data) < n + 4:
        raise FormatError("stream shorter than the GOP header")
    fields = _HEADER.unpack_from(data)
    if fields[0] != MAGIC:
        raise FormatError(f"bad magic {fields[0]!r}")
    if fields[1] != VERSION:
        raise FormatError(f"unsupported version {fields[1]}")
    (crc,) = struct.unpack_from("<I", data, n)
    if crc != zlib.crc32(data[:n]):
        raise FormatError("header CRC mismatch")
    h = GopHeader(*fields[2:])
    h.lam = float(h.lam)
    if h.width <= 0 or h.height <= 0 or h.width % 2 or h.height % 2:
        raise FormatError(f"invalid frame size {h.width}x{h.height}")
    return h, n + 4


def read_gop(data: bytes):
    """Inverse of ``write_gop``: returns (GopHeader, [FrameRecord])."""
    header, pos = read_header(data)
    H, W = header.coded_height, header.coded_width
    # check framing and CRCs of every record before decoding anything
    spans = []
    for _ in range(header.n_frames):
        if pos + 4 > len(data):
            raise FormatError("stream truncated before a frame record")
        (n,) = struct.unpack_from("<I", data, pos)
        start, end = pos + 4, pos + 4 + n
        if n < _FRAME.size + 4 or end > len(data):
            raise FormatError(f"frame record length {n} overruns the stream")
        (crc,) = struct.unpack_from("<I", data, end - 4)
        if crc != zlib.crc32(data[start:end - 4]):
            raise FormatError(f"frame record CRC mismatch at byte {pos}")
        spans.append((start, end))
        pos = end
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after the last frame")
    records = []
    for start, end in spans:
        r = _Reader(data, start, end - 4)
        index, kind_code, r1, r2 = r.unpack(_FRAME)
        kinds = {v: k for k, v in FRAME_KINDS.items()}
        if kind_code not in kinds:
            raise FormatError(f"unknown frame kind {kind_code}")
        kind = kinds[kind_code]
        refs = tuple(x for x in (r1, r2) if x != NO_REF)
        decs = []
        try:
            for dk in decoder_kinds(kind):
                qp = _decode_params(dk, r)
                n_levels = len(ARCHITECTURES[dk].levels)
                payloads = [r.take(r.varint()) for _ in range(n_levels)]
                decs.append(DecoderPayload(dk, qp, decode_latents(dk, H, W, qp, payloads)))
        except StreamError as exc:
            raise FormatError(f"frame {index}: {exc}") from exc
        if r.pos != r.end:
            raise FormatError(f"frame {index}: {r.end - r.pos} unread bytes in record")
        records.append(FrameRecord(index, kind, refs, decs))
    return header, records
