"""PSNR (YUV 4:2:0 pooled or BT.709 RGB) and Bjontegaard delta rate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PSNR_CAP = 99.99


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class RdPoint:
    bpp: float
    psnr_db: float


def pooled_mse(reference, decoded) -> float:
    """MSE over every sample of every plane (planes weighted by sample count)."""
    if len(reference) != len(decoded):
        raise MetricError("plane count mismatch")
    se, n = 0.0, 0
    for r, d in zip(reference, decoded):
        r, d = np.asarray(r, np.float64), np.asarray(d, np.float64)
        if r.shape != d.shape:
            raise MetricError(f"plane shape mismatch {r.shape} vs {d.shape}")
        se += float(((r - d) ** 2).sum())
        n += r.size
    if n == 0:
        raise MetricError("empty planes")
    return se / n


def psnr_from_mse(mse: float, peak: float) -> float:
    if mse <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse))


def psnr(reference, decoded, bit_depth: int = 8) -> float:
    """PSNR over 4:2:0 planes (Y, U, V) with pooled MSE."""
    return psnr_from_mse(pooled_mse(reference, decoded), (1 << bit_depth) - 1)


def yuv420_to_rgb(planes, bit_depth: int = 8) -> np.ndarray:
    """BT.709 full-range conversion; chroma upsampled by sample repetition."""
    peak = (1 << bit_depth) - 1
    y = np.asarray(planes[0], np.float64) / peak
    u = np.repeat(np.repeat(np.asarray(planes[1], np.float64), 2, 0), 2, 1) / peak - 0.5
    v = np.repeat(np.repeat(np.asarray(planes[2], np.float64), 2, 0), 2, 1) / peak - 0.5
    r = y + 1.5748 * v
    g = y - 0.1873 * u - 0.4681 * v
    b = y + 1.8556 * u
    return np.clip(np.stack([r, g, b]), 0.0, 1.0) * peak


def psnr_rgb(reference, decoded, bit_depth: int = 8) -> float:
    a, b = yuv420_to_rgb(reference, bit_depth), yuv420_to_rgb(decoded, bit_depth)
    return psnr_from_mse(float(((a - b) ** 2).mean()), (1 << bit_depth) - 1)


def video_psnr(reference_frames, decoded_frames, bit_depth: int = 8) -> float:
    """PSNR of the MSE pooled over all frames."""
    mses = [pooled_mse(r, d) for r, d in zip(reference_frames, decoded_frames, strict=True)]
    return psnr_from_mse(float(np.mean(mses)), (1 << bit_depth) - 1)


def bpp(n_bytes: int, width: int, height: int, n_frames: int) -> float:
    return n_bytes * 8.0 / (width * height * n_frames)


def _curve(points):
    pts = sorted(points, key=lambda p: p.psnr_db)
    if len(pts) < 4:
        raise MetricError(f"BD-rate needs at least 4 RD points, got {len(pts)}")
    r = np.array([p.bpp for p in pts], dtype=np.float64)
    q = np.array([p.psnr_db for p in pts], dtype=np.float64)
    if (r <= 0).any() or not np.isfinite(q).all():
        raise MetricError("RD points need positive rates and finite PSNR")
    return np.log(r), q


def bd_rate(anchor, test) -> float:
    """Average rate difference (percent) at equal PSNR; negative means savings.

    Third-order polynomial fit of log-rate against PSNR, integrated over the
    overlapping PSNR interval.
    """
    la, qa = _curve(anchor)
    lt, qt = _curve(test)
    lo, hi = max(qa.min(), qt.min()), min(qa.max(), qt.max())
    if not hi > lo:
        raise MetricError(f"PSNR ranges do not overlap: anchor [{qa.min():.3f}, {qa.max():.3f}], "
                          f"test [{qt.min():.3f}, {qt.max():.3f}]")
    pa = np.polynomial.Polynomial.fit(qa, la, 3).convert()
    pt = np.polynomial.Polynomial.fit(qt, lt, 3).convert()
    ia, it = pa.integ(), pt.integ()
    avg = ((it(hi) - it(lo)) - (ia(hi) - ia(lo))) / (hi - lo)
    return float((np.exp(avg) - 1.0) * 100.0)


def read_rd_file(path) -> list:
    """TSV with ``bpp`` and ``psnr`` columns (header line optional)."""
    pts = []
    with open(path) as fh:
        for line in fh:
            cols = line.strip().split()
            if not cols or cols[0].startswith("#"):
                continue
            try:
                pts.append(RdPoint(float(cols[0]), float(cols[1])))
            except ValueError:
                continue  # header
    return pts
