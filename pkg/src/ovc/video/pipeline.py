"""Inter-frame decoding math: bilinear warping, blending, masked reconstruction.

Frames live in a dense YUV 4:4:4 float buffer (3, H, W) in [0, 1]; 4:2:0
planes are produced only for the loss and for file output.
"""

from __future__ import annotations

import numpy as np

from .. import numerics as nx
from ..numerics.tensor import ShapeError, Tensor, as_tensor, make


class PipelineError(RuntimeError):
    """Missing references or inconsistent frame inputs."""


def warp(ref, flow) -> Tensor:
    """Backward bilinear warp: out[:, i, j] = ref sampled at (i + dy, j + dx).

    ``flow`` is (2, H, W) holding (dx, dy) in pixels.  Sample positions are
    clamped to the frame, so out-of-frame reads return the nearest edge pixel
    (and carry no gradient to the flow).
    """
    ref, flow = as_tensor(ref), as_tensor(flow)
    C, H, W = ref.shape
    if flow.shape != (2, H, W):
        raise ShapeError(f"warp: ref {ref.shape} flow {flow.shape}")
    if H < 2 or W < 2:
        raise ShapeError("warp needs at least 2x2 frames")
    dt = ref.data.dtype
    ii, jj = np.mgrid[0:H, 0:W].astype(dt)
    xs = jj + flow.data[0]
    ys = ii + flow.data[1]
    in_x = (xs >= 0) & (xs <= W - 1)
    in_y = (ys >= 0) & (ys <= H - 1)
    xs = np.clip(xs, 0, W - 1)
    ys = np.clip(ys, 0, H - 1)
    x0 = np.minimum(np.floor(xs), W - 2).astype(np.int64)
    y0 = np.minimum(np.floor(ys), H - 2).astype(np.int64)
    wx = (xs - x0).astype(dt)
    wy = (ys - y0).astype(dt)
    r = ref.data
    v00 = r[:, y0, x0]
    v01 = r[:, y0, x0 + 1]
    v10 = r[:, y0 + 1, x0]
    v11 = r[:, y0 + 1, x0 + 1]
    top = v00 * (1 - wx) + v01 * wx
    bot = v10 * (1 - wx) + v11 * wx
    out = top * (1 - wy) + bot * wy

    def back(g):
        g_ref = g_flow = None
        if ref.requires_grad:
            base = y0 * W + x0
            acc = np.zeros((C, H * W), dtype=np.float64)
            for off, wgt in ((0, (1 - wx) * (1 - wy)), (1, wx * (1 - wy)), (W, (1 - wx) * wy), (W + 1, wx * wy)):
                idx = (base + off).ravel()
                for c in range(C):
                    acc[c] += np.bincount(idx, weights=(g[c] * wgt).ravel(), minlength=H * W)
            g_ref = acc.reshape(C, H, W).astype(dt)
        if flow.requires_grad:
            dx = ((v01 - v00) * (1 - wy) + (v11 - v10) * wy) * g
            dy = (bot - top) * g
            g_flow = np.stack([dx.sum(axis=0) * in_x, dy.sum(axis=0) * in_y]).astype(dt)
        return g_ref, g_flow

    return make(out.astype(dt), (ref, flow), back)


def blend(ref1, ref2, v1, v2, beta) -> Tensor:
    """beta * warp(ref1, v1) + (1 - beta) * warp(ref2, v2); beta is (H, W).

    With ``ref2`` None (P-frame) beta is 1 and the result is warp(ref1, v1).
    """
    w1 = warp(ref1, v1)
    if ref2 is None:
        return w1
    w2 = warp(ref2, v2)
    beta = as_tensor(beta)
    b3 = beta.reshape((1,) + beta.shape)
    return b3 * w1 + (1.0 - b3) * w2


def reconstruct(prediction, alpha, residue) -> Tensor:
    """alpha * prediction + residue, alpha (H, W) broadcast over channels."""
    alpha = as_tensor(alpha)
    return alpha.reshape((1,) + alpha.shape) * prediction + residue


def _avg2(x: Tensor) -> Tensor:
    C, H, W = x.shape
    out = x.data.reshape(C, H // 2, 2, W // 2, 2).mean(axis=(2, 4))

    def back(g):
        return (np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25,)

    return make(out.astype(x.data.dtype), (x,), back)


def to_yuv420(dense) -> tuple:
    """(Y, U, V): luma untouched, chroma by 2x2 averaging."""
    dense = as_tensor(dense)
    if dense.ndim != 3 or dense.shape[0] != 3:
        raise ShapeError(f"to_yuv420 expects (3, H, W), got {dense.shape}")
    _, H, W = dense.shape
    if H % 2 or W % 2:
        raise ValueError(f"4:2:0 conversion needs even dimensions, got {H}x{W}")
    uv = _avg2(dense[1:3])
    return dense[0], uv[0], uv[1]


def upsample_chroma(plane: np.ndarray) -> np.ndarray:
    """Nearest-neighbour 2x chroma upsampling (adjoint of the 2x2 average up to 1/4)."""
    return np.repeat(np.repeat(plane, 2, axis=0), 2, axis=1)


def planes_to_dense(planes) -> np.ndarray:
    y, u, v = planes
    return np.stack([y, upsample_chroma(u), upsample_chroma(v)]).astype(nx.tensor.default_dtype())


def yuv420_mse(planes, target) -> Tensor:
    """MSE pooled over every 4:2:0 sample (Y, U and V concatenated)."""
    n = sum(t.size for t in target)
    total = None
    for p, t in zip(planes, target):
        term = nx.square(p - t).sum()
        total = term if total is None else total + term
    return total * (1.0 / n)


# -- decoder outputs -> frame ------------------------------------------
def motion_fields(out: Tensor, kind: str):
    """Split the motion synthesis output into (v1, v2, beta)."""
    if kind == "P":
        return out[0:2], None, None
    return out[0:2], out[2:4], nx.clamp_ste(out[4], 0.0, 1.0)


def residue_fields(out: Tensor):
    """Residue synthesis output -> (alpha, r); channel 3 is alpha."""
    return nx.clamp_ste(out[3], 0.0, 1.0), out[0:3]


def frame_from_outputs(kind: str, outputs: dict, refs: list) -> Tensor:
    """Compose decoder outputs into the reconstructed dense frame.

    ``outputs`` maps "intra" / "motion" / "residue" to synthesis outputs;
    ``refs`` holds the reconstructed reference frames in slot order.
    """
    if kind == "I":
        return outputs["intra"]
    need = 1 if kind == "P" else 2
    if len(refs) != need or any(r is None for r in refs):
        raise PipelineError(f"{kind}-frame needs {need} decoded references")
    v1, v2, beta = motion_fields(as_tensor(outputs["motion"]), kind)
    pred = blend(refs[0], refs[1] if kind == "B" else None, v1, v2, beta)
    alpha, r = residue_fields(as_tensor(outputs["residue"]))
    return reconstruct(pred, alpha, r)


def to_samples(planes, bit_depth: int) -> tuple:
    """Float planes in [0, 1] -> integer samples (uint16) at ``bit_depth``."""
    peak = (1 << bit_depth) - 1
    return tuple(np.rint(np.clip(np.asarray(p, dtype=np.float64), 0.0, 1.0) * peak).astype(np.uint16) for p in planes)


def from_samples(planes, bit_depth: int) -> tuple:
    peak = float((1 << bit_depth) - 1)
    return tuple(np.asarray(p, dtype=np.float64) / peak for p in planes)


def pad_planes(planes, multiple: int = 64) -> tuple:
    """Reflect-pad 4:2:0 planes so luma dims become multiples of ``multiple``."""
    y = planes[0]
    H, W = y.shape
    Hp, Wp = -(-H // multiple) * multiple, -(-W // multiple) * multiple
    out = [np.pad(y, ((0, Hp - H), (0, Wp - W)), mode="reflect" if min(H, W) > 1 else "edge")]
    for c in planes[1:]:
        h, w = c.shape
        ph, pw = Hp // 2 - h, Wp // 2 - w
        out.append(np.pad(c, ((0, ph), (0, pw)), mode="reflect" if min(h, w) > 1 else "edge"))
    return tuple(out)


def crop_planes(planes, H: int, W: int) -> tuple:
    return (planes[0][:H, :W], planes[1][: H // 2, : W // 2], planes[2][: H // 2, : W // 2])
