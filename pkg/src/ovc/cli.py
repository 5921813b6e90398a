"""Command line: encode | decode | metrics | bdrate | audit | flow.

Failures exit non-zero and print one JSON object {"error": category,
"message": ...} on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import metrics
from .audit import mac_audit
from .encoder import ConfigError, EncoderConfig, TrainingError, encode_video
from .entropy.bitstream import FormatError
from .entropy.rangecoder import StreamError
from .flow import FlowConfigError, FlowFormatError, estimate_flow, write_flo
from .video import gop as gopmod
from .video.pipeline import PipelineError
from .video.yuvio import VideoFormatError, load_video, write_y4m, write_yuv

EXIT_CODES = {"config": 2, "format": 3, "training": 4, "io": 5, "metric": 6, "pipeline": 7}


def _categorise(exc: Exception) -> str:
    if isinstance(exc, (ConfigError, FlowConfigError)):
        return "config"
    if isinstance(exc, (FormatError, StreamError, VideoFormatError, FlowFormatError)):
        return "format"
    if isinstance(exc, TrainingError):
        return "training"
    if isinstance(exc, metrics.MetricError):
        return "metric"
    if isinstance(exc, PipelineError):
        return "pipeline"
    if isinstance(exc, OSError):
        return "io"
    return "config"


def _video_args(p):
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--bit-depth", type=int, default=8)
    p.add_argument("--frames", type=int, help="number of frames to read")


def _write_video(path, frames, bit_depth):
    if str(path).endswith(".y4m"):
        h, w = frames[0][0].shape
        write_y4m(path, frames, w, h, bit_depth)
    else:
        write_yuv(path, frames, bit_depth)


def cmd_encode(a):
    frames, w, h, bd = load_video(a.input, a.width, a.height, a.bit_depth, a.frames or 9)
    over = {"lam": a.lam, "seed": a.seed, "pretrain_iters": a.pretrain_iters, "frame_iters": a.frame_iters,
            "joint_iters": a.joint_iters, "gop": a.gop, "flow_source": a.flow_source,
            "skip_pretrain": True if a.skip_pretrain else None, "skip_joint": True if a.skip_joint else None}
    if a.config:
        cfg = EncoderConfig.from_file(a.config, **over)
    else:
        cfg = EncoderConfig(**{k: v for k, v in over.items() if v is not None})
    res = encode_video(frames, cfg, bd)
    Path(a.output).write_bytes(res.bitstream)
    if a.report:
        Path(a.report).write_text(res.report.to_json())
    if a.rate_table:
        Path(a.rate_table).write_text(res.report.rate_table())
    if a.recon:
        _write_video(a.recon, res.decoded, bd)
    r = res.report
    print(json.dumps({"bytes": r.total_bytes, "bpp": r.bpp, "psnr_db": r.psnr_db, "cost": r.cost}))


def cmd_decode(a):
    from .decoder import decode_gop

    header, frames = decode_gop(Path(a.input).read_bytes())
    _write_video(a.output, frames, header.bit_depth)
    print(json.dumps({"frames": header.n_frames, "width": header.width, "height": header.height}))


def cmd_metrics(a):
    ref, w, h, bd = load_video(a.reference, a.width, a.height, a.bit_depth, a.frames)
    dec, *_ = load_video(a.decoded, w, h, bd, len(ref))
    if len(dec) != len(ref):
        raise metrics.MetricError(f"{len(ref)} reference frames but {len(dec)} decoded")
    out = {"frames": len(ref)}
    if a.rgb:
        out["psnr_rgb_db"] = float(np.mean([metrics.psnr_rgb(r, d, bd) for r, d in zip(ref, dec)]))
    else:
        out["psnr_yuv420_db"] = metrics.video_psnr(ref, dec, bd)
    if a.bitstream:
        n = Path(a.bitstream).stat().st_size
        out["bytes"] = n
        out["bpp"] = metrics.bpp(n, w, h, len(ref))
    print(json.dumps(out))


def cmd_bdrate(a):
    v = metrics.bd_rate(metrics.read_rd_file(a.anchor), metrics.read_rd_file(a.test))
    print(json.dumps({"bd_rate_percent": v}))


def cmd_audit(a):
    res = mac_audit(gopmod.build(gopmod.NAMES[a.gop], a.frames))
    print(json.dumps({"per_kind": res.breakdown(), "per_frame": res.per_frame, "gop_average": res.gop_average}, indent=1))


def cmd_flow(a):
    frames, *_ = load_video(a.input, a.width, a.height, a.bit_depth)
    for t in (a.cur, a.ref):
        if not 0 <= t < len(frames):
            raise ConfigError(f"frame {t} outside the {len(frames)}-frame input")
    flow = estimate_flow(frames[a.cur][0].astype(float), frames[a.ref][0].astype(float))
    write_flo(a.output, flow)
    print(json.dumps({"mean_dx": float(flow[0].mean()), "mean_dy": float(flow[1].mean())}))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ovc", description="Overfitted neural video codec.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("encode", help="video -> bitstream + report")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    _video_args(p)
    p.add_argument("--config", help="JSON file with EncoderConfig keys")
    p.add_argument("--lam", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--pretrain-iters", type=int)
    p.add_argument("--frame-iters", type=int)
    p.add_argument("--joint-iters", type=int)
    p.add_argument("--gop", choices=sorted(gopmod.NAMES))
    p.add_argument("--flow-source", help="'builtin' or a directory of flow_<t>_<ref>.flo files")
    p.add_argument("--skip-pretrain", action="store_true")
    p.add_argument("--skip-joint", action="store_true")
    p.add_argument("--report", help="write the EncodeReport as JSON")
    p.add_argument("--rate-table", help="write the per-frame rate distribution as TSV")
    p.add_argument("--recon", help="write the encoder-side reconstruction (.yuv or .y4m)")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="bitstream -> video")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("metrics", help="PSNR (and bpp) of a decoded video")
    p.add_argument("reference")
    p.add_argument("decoded")
    _video_args(p)
    p.add_argument("--bitstream", help="bitstream file for bpp")
    p.add_argument("--rgb", action="store_true", help="BT.709 RGB PSNR instead of YUV 4:2:0")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("bdrate", help="BD-rate of two RD files (columns: bpp psnr)")
    p.add_argument("anchor")
    p.add_argument("test")
    p.set_defaults(func=cmd_bdrate)

    p = sub.add_parser("audit", help="MAC per decoded pixel")
    p.add_argument("--gop", choices=sorted(gopmod.NAMES), default="ra")
    p.add_argument("--frames", type=int, default=9)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("flow", help="estimate a flow between two frames -> .flo")
    p.add_argument("input")
    p.add_argument("--cur", type=int, required=True)
    p.add_argument("--ref", type=int, required=True)
    p.add_argument("-o", "--output", required=True)
    _video_args(p)
    p.set_defaults(func=cmd_flow)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        a.func(a)
    except Exception as exc:  # reported as a machine-readable category
        cat = _categorise(exc)
        print(json.dumps({"error": cat, "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_CODES[cat]
    return 0


if __name__ == "__main__":
    sys.exit(main())
