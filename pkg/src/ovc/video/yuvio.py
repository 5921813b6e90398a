"""Raw planar YUV 4:2:0 (8/10-bit little-endian) and Y4M reading."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class VideoFormatError(ValueError):
    pass


def _sample_dtype(bit_depth: int):
    if bit_depth == 8:
        return np.dtype(np.uint8)
    if 8 < bit_depth <= 16:
        return np.dtype("<u2")
    raise VideoFormatError(f"unsupported bit depth {bit_depth}")


def frame_bytes(width: int, height: int, bit_depth: int) -> int:
    if width % 2 or height % 2:
        raise VideoFormatError(f"4:2:0 needs even dimensions, got {width}x{height}")
    return (width * height * 3 // 2) * _sample_dtype(bit_depth).itemsize


def _split(buf: np.ndarray, width: int, height: int) -> tuple:
    n = width * height
    y = buf[:n].reshape(height, width)
    u = buf[n:n + n // 4].reshape(height // 2, width // 2)
    v = buf[n + n // 4:].reshape(height // 2, width // 2)
    return y.astype(np.uint16), u.astype(np.uint16), v.astype(np.uint16)


def read_yuv(path, width: int, height: int, bit_depth: int = 8, n_frames: int | None = None) -> list:
    """List of (Y, U, V) uint16 planes."""
    dt = _sample_dtype(bit_depth)
    fb = frame_bytes(width, height, bit_depth)
    raw = Path(path).read_bytes()
    if len(raw) % fb:
        raise VideoFormatError(f"{path}: size {len(raw)} is not a multiple of the frame size {fb}")
    total = len(raw) // fb
    n = total if n_frames is None else min(n_frames, total)
    frames = []
    for t in range(n):
        buf = np.frombuffer(raw, dtype=dt, count=fb // dt.itemsize, offset=t * fb)
        frames.append(_split(buf, width, height))
    return frames


def encode_yuv(frames, bit_depth: int = 8) -> bytes:
    dt = _sample_dtype(bit_depth)
    peak = (1 << bit_depth) - 1
    out = bytearray()
    for planes in frames:
        for p in planes:
            p = np.asarray(p)
            if p.size and int(p.max()) > peak:
                raise VideoFormatError(f"sample {int(p.max())} exceeds {bit_depth}-bit range")
            out += p.astype(dt).tobytes()
    return bytes(out)


def write_yuv(path, frames, bit_depth: int = 8):
    Path(path).write_bytes(encode_yuv(frames, bit_depth))


def read_y4m(path, n_frames: int | None = None):
    """Returns (frames, width, height, bit_depth) for 4:2:0 Y4M files."""
    raw = Path(path).read_bytes()
    end = raw.find(b"\n")
    if not raw.startswith(b"YUV4MPEG2") or end < 0:
        raise VideoFormatError(f"{path}: not a Y4M file")
    width = height = None
    bit_depth = 8
    for tok in raw[:end].split()[1:]:
        key, val = chr(tok[0]), tok[1:].decode()
        if key == "W":
            width = int(val)
        elif key == "H":
            height = int(val)
        elif key == "C":
            if not val.startswith("420"):
                raise VideoFormatError(f"{path}: only 4:2:0 supported, got C{val}")
            if "p" in val[3:]:
                bit_depth = int(val.split("p")[1])
    if width is None or height is None:
        raise VideoFormatError(f"{path}: missing W/H")
    dt = _sample_dtype(bit_depth)
    fb = frame_bytes(width, height, bit_depth)
    pos = end + 1
    frames = []
    while pos < len(raw) and (n_frames is None or len(frames) < n_frames):
        nl = raw.find(b"\n", pos)
        if nl < 0 or not raw.startswith(b"FRAME", pos):
            raise VideoFormatError(f"{path}: bad frame marker at byte {pos}")
        pos = nl + 1
        if pos + fb > len(raw):
            raise VideoFormatError(f"{path}: truncated frame")
        buf = np.frombuffer(raw, dtype=dt, count=fb // dt.itemsize, offset=pos)
        frames.append(_split(buf, width, height))
        pos += fb
    return frames, width, height, bit_depth


def write_y4m(path, frames, width: int, height: int, bit_depth: int = 8, fps: str = "25:1"):
    cs = "420" if bit_depth == 8 else f"420p{bit_depth}"
    out = bytearray(f"YUV4MPEG2 W{width} H{height} F{fps} Ip A1:1 C{cs}\n".encode())
    for planes in frames:
        out += b"FRAME\n" + encode_yuv([planes], bit_depth)
    Path(path).write_bytes(bytes(out))


def load_video(path, width=None, height=None, bit_depth=8, n_frames=None):
    """Y4M (by extension) or raw YUV; returns (frames, width, height, bit_depth)."""
    if str(path).endswith(".y4m"):
        return read_y4m(path, n_frames)
    if width is None or height is None:
        raise VideoFormatError("raw YUV input needs --width and --height")
    return read_yuv(path, width, height, bit_depth, n_frames), width, height, bit_depth
