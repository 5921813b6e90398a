"""Encode one sequence at several lambdas; write an RD file (bpp, PSNR) for `ovc bdrate`."""

import argparse
import json
import logging

from ovc.encoder import STANDARD_LAMBDAS, EncoderConfig, encode_video
from ovc.synthetic import moving_sequence
from ovc.video.yuvio import load_video


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--input", help="YUV/Y4M file; default is a synthetic 64x64 pan")
    ap.add_argument("--width", type=int)
    ap.add_argument("--height", type=int)
    ap.add_argument("--frames", type=int, default=9)
    ap.add_argument("--lambdas", type=float, nargs="+", default=list(STANDARD_LAMBDAS))
    ap.add_argument("--pretrain-iters", type=int, default=300)
    ap.add_argument("--frame-iters", type=int, default=500)
    ap.add_argument("--joint-iters", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("-o", "--output", default="rd.tsv")
    a = ap.parse_args()
    logging.basicConfig(level=logging.INFO)

    if a.input:
        frames, _, _, bd = load_video(a.input, a.width, a.height, 8, a.frames)
    else:
        frames, bd = moving_sequence(a.frames, 64, step=2), 8
    rows = ["bpp\tpsnr_db\tlambda\tcost"]
    for lam in a.lambdas:
        cfg = EncoderConfig(lam=lam, pretrain_iters=a.pretrain_iters, frame_iters=a.frame_iters,
                            joint_iters=a.joint_iters, seed=a.seed)
        r = encode_video(frames, cfg, bd).report
        rows.append(f"{r.bpp:.6f}\t{r.psnr_db:.4f}\t{lam}\t{r.cost:.6g}")
        print(json.dumps({"lambda": lam, "bpp": r.bpp, "psnr_db": r.psnr_db}), flush=True)
    with open(a.output, "w") as fh:
        fh.write("\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
