"""Decoder complexity in multiply-accumulates per decoded pixel.

Convention: one MAC per multiply-accumulate, biases and nonlinearities
excluded, warping excluded.  ARM cost is charged per latent (density
sum_l 4^-l over the decoder's active levels), the upsampler per output
sample of every intermediate grid, the synthesis per pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .coolchic import ARCHITECTURES
from .video import gop as gopmod

REFERENCE_MACS = {"intra": 2292, "residue": 774, "motion_p": 257, "motion_b": 473}
TCONV_TAPS = 16  # 8x8 kernel, stride 2: 64 / 4 taps per output sample


def latent_density(levels) -> float:
    return sum(4.0 ** -lv for lv in levels)


def arm_macs(kind: str) -> float:
    a = ARCHITECTURES[kind]
    return sum(i * o for i, o in a.arm) * latent_density(a.levels)


def upsampler_macs(kind: str) -> float:
    a = ARCHITECTURES[kind]
    # level l is raised through grids at levels l-1, ..., 0
    return TCONV_TAPS * sum(latent_density(range(lv)) for lv in a.levels if lv > 0)


def synthesis_macs(kind: str) -> float:
    return float(sum(L.k * L.k * L.c_in * L.c_out for L in ARCHITECTURES[kind].synthesis))


def decoder_macs(kind: str) -> float:
    return arm_macs(kind) + upsampler_macs(kind) + synthesis_macs(kind)


def frame_kinds(frame_kind: str) -> list:
    if frame_kind == "I":
        return ["intra"]
    return ["motion_p" if frame_kind == "P" else "motion_b", "residue"]


@dataclass
class MacAudit:
    per_kind: dict
    per_frame: list = field(default_factory=list)  # (index, kind, MAC/pixel)
    gop_average: float = 0.0

    def breakdown(self) -> dict:
        return {k: {"arm": arm_macs(k), "upsampler": upsampler_macs(k), "synthesis": synthesis_macs(k),
                    "total": v, "reference": REFERENCE_MACS[k]} for k, v in self.per_kind.items()}


def mac_audit(structure: gopmod.GopStructure | None = None, per_kind: dict | None = None) -> MacAudit:
    """Audit the default architectures (or given per-kind figures) over a GOP."""
    structure = structure or gopmod.random_access(9)
    per_kind = per_kind or {k: decoder_macs(k) for k in ARCHITECTURES}
    per_frame = [(f.index, f.kind, sum(per_kind[k] for k in frame_kinds(f.kind))) for f in structure.frames]
    avg = sum(m for _, _, m in per_frame) / len(per_frame)
    return MacAudit(dict(per_kind), per_frame, avg)


def reference_gop_average(structure: gopmod.GopStructure | None = None) -> float:
    return mac_audit(structure, REFERENCE_MACS).gop_average

