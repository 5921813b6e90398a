"""Encoder-side optical flow guidance: .flo files and a block-matching estimator.

Flows are (2, H, W) arrays of (dx, dy) in pixels mapping a pixel of the
current frame to its location in the reference: cur(p) ~ ref(p + flow(p)).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

FLO_MAGIC = 202021.25
LEVELS = 4
BLOCK = 16
SEARCH = 8
MIN_SIZE = 64


class FlowFormatError(ValueError):
    pass


class FlowConfigError(ValueError):
    pass


def check_flow(flow: np.ndarray, H: int | None = None, W: int | None = None) -> np.ndarray:
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[0] != 2 or flow.shape[1] == 0 or flow.shape[2] == 0:
        raise FlowFormatError(f"flow must be (2, H, W) with H, W > 0, got {flow.shape}")
    if H is not None and flow.shape[1:] != (H, W):
        raise FlowFormatError(f"flow is {flow.shape[1:]}, frame is {(H, W)}")
    if not np.isfinite(flow).all():
        raise FlowFormatError("flow contains non-finite values")
    if np.abs(flow).max(initial=0.0) >= max(flow.shape[1:]):
        raise FlowFormatError("flow magnitude exceeds the frame size")
    return flow


def write_flo(path, flow: np.ndarray):
    flow = np.asarray(flow, dtype=np.float32)
    if flow.ndim != 3 or flow.shape[0] != 2 or 0 in flow.shape:
        raise FlowFormatError(f"cannot write flow of shape {flow.shape}")
    _, h, w = flow.shape
    body = np.ascontiguousarray(flow.transpose(1, 2, 0)).astype("<f4").tobytes()
    Path(path).write_bytes(struct.pack("<fii", FLO_MAGIC, w, h) + body)


def read_flo(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FlowFormatError(f"{path}: truncated header")
    magic, w, h = struct.unpack_from("<fii", raw)
    if magic != np.float32(FLO_MAGIC):
        raise FlowFormatError(f"{path}: bad magic {magic}")
    if w <= 0 or h <= 0:
        raise FlowFormatError(f"{path}: degenerate size {w}x{h}")
    if len(raw) != 12 + 8 * w * h:
        raise FlowFormatError(f"{path}: expected {12 + 8 * w * h} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w, 2)
    return data.transpose(2, 0, 1).astype(np.float32)


def flow_epe(est: np.ndarray, gt: np.ndarray) -> float:
    """Mean end-point error in pixels."""
    est, gt = np.asarray(est, np.float64), np.asarray(gt, np.float64)
    if est.shape != gt.shape:
        raise ValueError(f"flow shapes differ: {est.shape} vs {gt.shape}")
    return float(np.sqrt(((est - gt) ** 2).sum(axis=0)).mean())


_BINOMIAL = np.array([1, 4, 6, 4, 1], dtype=np.float64) / 16


def _pyramid(img: np.ndarray) -> list:
    levels = [img]
    for _ in range(LEVELS - 1):
        sm = ndimage.convolve1d(ndimage.convolve1d(levels[-1], _BINOMIAL, axis=0, mode="nearest"), _BINOMIAL, axis=1, mode="nearest")
        levels.append(sm[::2, ::2])
    return levels


def _bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    H, W = img.shape
    ys = np.clip(ys, 0, H - 1)
    xs = np.clip(xs, 0, W - 1)
    y0 = np.minimum(np.floor(ys).astype(int), H - 2)
    x0 = np.minimum(np.floor(xs).astype(int), W - 2)
    wy, wx = ys - y0, xs - x0
    return (img[y0, x0] * (1 - wx) * (1 - wy) + img[y0, x0 + 1] * wx * (1 - wy)
            + img[y0 + 1, x0] * (1 - wx) * wy + img[y0 + 1, x0 + 1] * wx * wy)


def _candidate_order():
    d = np.arange(-SEARCH, SEARCH + 1)
    dy, dx = np.meshgrid(d, d, indexing="ij")
    # ties resolve towards the predicted displacement
    return np.argsort((dy**2 + dx**2).ravel(), kind="stable")


_ORDER = _candidate_order()


def _match_level(cur: np.ndarray, ref: np.ndarray, pred: np.ndarray) -> np.ndarray:
    """Per-block displacement (2, nby, nbx) given a per-pixel predicted field."""
    H, W = cur.shape
    bh, bw = min(BLOCK, H), min(BLOCK, W)
    nby, nbx = -(-H // bh), -(-W // bw)
    out = np.zeros((2, nby, nbx))
    n = 2 * SEARCH + 1
    for by in range(nby):
        for bx in range(nbx):
            y0, x0 = min(by * bh, H - bh), min(bx * bw, W - bw)
            blk = cur[y0:y0 + bh, x0:x0 + bw]
            c = np.rint(pred[:, y0:y0 + bh, x0:x0 + bw].reshape(2, -1).mean(axis=1)).astype(int)
            ys = np.clip(np.arange(y0 + c[1] - SEARCH, y0 + c[1] + SEARCH + bh), 0, H - 1)
            xs = np.clip(np.arange(x0 + c[0] - SEARCH, x0 + c[0] + SEARCH + bw), 0, W - 1)
            win = sliding_window_view(ref[np.ix_(ys, xs)], (bh, bw))  # n, n, bh, bw
            sad = np.abs(win - blk).sum(axis=(2, 3)).ravel()
            k = _ORDER[np.argmin(sad[_ORDER])]
            best = np.array([k % n - SEARCH + c[0], k // n - SEARCH + c[1]], dtype=np.float64)
            best_sad = sad[k]
            gy, gx = np.mgrid[y0:y0 + bh, x0:x0 + bw].astype(np.float64)
            base = best.copy()
            for hy in (-0.5, 0.0, 0.5):
                for hx in (-0.5, 0.0, 0.5):
                    if hx == 0 and hy == 0:
                        continue
                    s = np.abs(_bilinear(ref, gy + base[1] + hy, gx + base[0] + hx) - blk).sum()
                    if s < best_sad:
                        best_sad, best = s, base + (hx, hy)
            out[:, by, bx] = best
    return out, bh, bw


def _expand(blocks: np.ndarray, bh: int, bw: int, H: int, W: int) -> np.ndarray:
    f = np.repeat(np.repeat(blocks, bh, axis=1), bw, axis=2)
    return f[:, :H, :W]


def estimate_flow(cur: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Hierarchical block matching on luma planes; returns (2, H, W) float32."""
    cur = np.asarray(cur, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if cur.shape != ref.shape or cur.ndim != 2:
        raise FlowConfigError(f"frames must be equal-size 2-D planes, got {cur.shape} and {ref.shape}")
    if min(cur.shape) < MIN_SIZE:
        raise FlowConfigError(f"frames of {cur.shape} are too small for a {LEVELS}-level pyramid (min {MIN_SIZE})")
    pc, pr = _pyramid(cur), _pyramid(ref)
    field = np.zeros((2,) + pc[-1].shape)
    for lv in range(LEVELS - 1, -1, -1):
        c, r = pc[lv], pr[lv]
        H, W = c.shape
        if field.shape[1:] != (H, W):
            field = np.stack([ndimage.zoom(f, (H / f.shape[0], W / f.shape[1]), order=1, mode="nearest") * 2 for f in field])
        blocks, bh, bw = _match_level(c, r, field)
        blocks = np.stack([ndimage.median_filter(b, size=3, mode="nearest") for b in blocks])
        field = _expand(blocks, bh, bw, H, W)
    return field.astype(np.float32)
