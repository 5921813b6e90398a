"""Bitstream -> decoded 4:2:0 frames."""

from __future__ import annotations

from .coolchic import decoder_from_quantized
from .encoder import infer_frame, output_frames
from .entropy.bitstream import read_gop
from .video import gop as gopmod
from .video.pipeline import PipelineError


def decode_gop(data: bytes):
    """Returns (GopHeader, display-order list of (Y, U, V) uint16 planes)."""
    header, records = read_gop(data)
    structure = gopmod.build(header.gop_id, header.n_frames)
    if [r.index for r in records] != structure.decode_order:
        raise PipelineError(f"frame order {[r.index for r in records]} does not match GOP {structure.decode_order}")
    H, W = header.coded_height, header.coded_width
    recon = {}
    for rec, spec in zip(records, structure.frames):
        if rec.kind != spec.kind or tuple(rec.refs) != tuple(spec.refs):
            raise PipelineError(f"frame {rec.index}: record {rec.kind}{rec.refs} vs structure {spec.kind}{spec.refs}")
        missing = [r for r in rec.refs if r not in recon]
        if missing:
            raise PipelineError(f"frame {rec.index}: references {missing} not decoded")
        roles = ["intra"] if rec.kind == "I" else ["motion", "residue"]
        decs = {role: decoder_from_quantized(p.kind, H, W, p.qparams, p.latents) for role, p in zip(roles, rec.decoders)}
        recon[rec.index] = infer_frame(rec.kind, decs, [recon[r] for r in rec.refs])
    return header, output_frames(recon, header.n_frames, header.height, header.width, header.bit_depth)
