"""Layer primitives: affine, small 2-D convolutions, stride-2 transposed conv."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_tensor, make


def linear(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``y = x W^T + b`` for ``x`` of shape (in,) or (N, in)."""
    x = as_tensor(x)
    if W.ndim != 2 or x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ShapeError(f"linear: x{x.shape} W{W.shape} b{b.shape}")
    xd, Wd = x.data, W.data

    def back(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = xd.reshape(-1, xd.shape[-1])
        return (
            (g @ Wd) if x.requires_grad else None,
            (g2.T @ x2) if W.requires_grad else None,
            g2.sum(axis=0) if b.requires_grad else None,
        )

    return make(xd @ Wd.T + b.data, (x, W, b), back)


def _im2col3(xp: np.ndarray, H: int, W: int) -> np.ndarray:
    # xp: (C, H+2, W+2) -> (C*9, H*W), tap order (c, dy, dx)
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # C, H, W, 3, 3
    C = xp.shape[0]
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(C * 9, H * W)


def conv2d(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """Stride-1 cross-correlation with zero padding ``k // 2``; k in {1, 3}.

    ``x``: (C_in, H, W); ``W``: (C_out, C_in, k, k); ``b``: (C_out,).
    """
    x = as_tensor(x)
    if x.ndim != 3 or W.ndim != 4 or W.shape[1] != x.shape[0]:
        raise ShapeError(f"conv2d: x{x.shape} W{W.shape}")
    co, ci, k, k2 = W.shape
    if k != k2 or k not in (1, 3):
        raise ShapeError(f"conv2d: unsupported kernel {k}x{k2}")
    if b.shape != (co,):
        raise ShapeError(f"conv2d: bias {b.shape} for {co} outputs")
    _, H, Wd = x.shape
    W2 = W.data.reshape(co, ci * k * k)

    if k == 1:
        cols = x.data.reshape(ci, H * Wd)
    else:
        xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1)))
        cols = _im2col3(xp, H, Wd)
    out = (W2 @ cols + b.data[:, None]).reshape(co, H, Wd)

    def back(g):
        g2 = g.reshape(co, H * Wd)
        gW = (g2 @ cols.T).reshape(W.shape) if W.requires_grad else None
        gb = g2.sum(axis=1) if b.requires_grad else None
        gx = None
        if x.requires_grad:
            gc = W2.T @ g2
            if k == 1:
                gx = gc.reshape(ci, H, Wd)
            else:
                gc = gc.reshape(ci, 3, 3, H, Wd)
                gp = np.zeros((ci, H + 2, Wd + 2), dtype=g.dtype)
                for dy in range(3):
                    for dx in range(3):
                        gp[:, dy:dy + H, dx:dx + Wd] += gc[:, dy, dx]
                gx = gp[:, 1:-1, 1:-1]
        return gx, gW, gb

    return make(out, (x, W, b), back)


# Stride-2 transposed convolution, 8x8 kernel.  The raw (2h+6) x (2w+6) output
# is center-cropped by 3 on each side, so cropped output o = 2p + r reads raw
# row o + 3 and sums input rows p + d for d in [-2, 2].  Each output parity
# (ry, rx) is then a 5x5 correlation of the input with a sparse phase kernel.
def _phase_map():
    # entries (kernel_y, kernel_x, tap, phase): tap indexes the 5x5 window
    off = (1, 2)
    rows = []
    for a in range(8):
        r = (a % 2 + 1) % 2
        m = (a - (r + 1) % 2) // 2
        rows.append((r, off[r] - m + 2))  # (parity, window offset 0..4)
    ky, kx, tap, ph = [], [], [], []
    for a in range(8):
        ra, ta = rows[a]
        for c in range(8):
            rc, tc = rows[c]
            ky.append(a)
            kx.append(c)
            tap.append(ta * 5 + tc)
            ph.append(ra * 2 + rc)
    return np.array(ky), np.array(kx), np.array(tap), np.array(ph)


_KY, _KX, _TAP, _PH = _phase_map()


def tconv2d_stride2(x: Tensor, K: Tensor, b: Tensor) -> Tensor:
    """Single-channel transposed convolution doubling each spatial extent.

    ``x`` is (h, w) or a batch (N, h, w) sharing the same kernel ``K`` (8, 8)
    and scalar bias ``b``.  Output is (…, 2h, 2w).
    """
    x = as_tensor(x)
    if K.shape != (8, 8) or b.size != 1:
        raise ShapeError(f"tconv2d_stride2: kernel {K.shape}, bias {b.shape}")
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3:
        raise ShapeError(f"tconv2d_stride2: input {x.shape}")
    n, h, w = xd.shape
    dt = xd.dtype

    M = np.zeros((25, 4), dtype=dt)
    M[_TAP, _PH] = K.data[_KY, _KX]
    xp = np.pad(xd, ((0, 0), (2, 2), (2, 2)))
    cols = np.ascontiguousarray(sliding_window_view(xp, (5, 5), axis=(1, 2))).reshape(n * h * w, 25)
    ph = cols @ M  # (n*h*w, 4)
    out = ph.reshape(n, h, w, 2, 2).transpose(0, 1, 3, 2, 4).reshape(n, 2 * h, 2 * w)
    out = out + b.data.reshape(())
    if squeeze:
        out = out[0]

    def back(g):
        g3 = g[None] if squeeze else g
        gph = g3.reshape(n, h, 2, w, 2).transpose(0, 1, 3, 2, 4).reshape(n * h * w, 4)
        gK = gx = gb = None
        if K.requires_grad:
            gM = cols.T @ gph
            gK = np.zeros((8, 8), dtype=dt)
            gK[_KY, _KX] = gM[_TAP, _PH]
        if b.requires_grad:
            gb = np.asarray(g.sum(), dtype=dt).reshape(b.shape)
        if x.requires_grad:
            gc = (gph @ M.T).reshape(n, h, w, 5, 5)
            gp = np.zeros((n, h + 4, w + 4), dtype=dt)
            for dy in range(5):
                for dx in range(5):
                    gp[:, dy:dy + h, dx:dx + w] += gc[:, :, :, dy, dx]
            gx = gp[:, 2:-2, 2:-2]
            if squeeze:
                gx = gx[0]
        return gx, gK, gb

    return make(out, (x, K, b), back)


def bilinear_kernel() -> np.ndarray:
    """Separable bilinear x2 upsampling filter embedded in an 8x8 kernel."""
    k1 = np.array([0, 0, 0.25, 0.75, 0.75, 0.25, 0, 0])
    return np.outer(k1, k1)


def tconv2d_stride2_reference(x: np.ndarray, K: np.ndarray, b: float = 0.0) -> np.ndarray:
    """Loop definition of the cropped transposed convolution (test oracle)."""
    h, w = x.shape
    raw = np.zeros((2 * h + 6, 2 * w + 6), dtype=np.float64)
    for i in range(h):
        for j in range(w):
            raw[2 * i:2 * i + 8, 2 * j:2 * j + 8] += x[i, j] * K
    return raw[3:3 + 2 * h, 3:3 + 2 * w] + b
