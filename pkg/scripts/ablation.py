"""Ablation grid: motion pre-training and joint stage switched on/off at matched budgets."""

import argparse
import itertools

from ovc.encoder import EncoderConfig, encode_video
from ovc.synthetic import moving_sequence


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--frames", type=int, default=3)
    ap.add_argument("--step", type=int, default=4, help="pan in px/frame")
    ap.add_argument("--lam", type=float, default=0.0025)
    ap.add_argument("--pretrain-iters", type=int, default=300)
    ap.add_argument("--frame-iters", type=int, default=300)
    ap.add_argument("--joint-iters", type=int, default=100)
    a = ap.parse_args()

    frames = moving_sequence(a.frames, a.size, a.step)
    print("pretrain\tjoint\tcost\tbpp\tpsnr_db")
    for pre, joint in itertools.product((True, False), repeat=2):
        cfg = EncoderConfig(lam=a.lam, pretrain_iters=a.pretrain_iters, frame_iters=a.frame_iters,
                            joint_iters=a.joint_iters, skip_pretrain=not pre, skip_joint=not joint)
        r = encode_video(frames, cfg).report
        print(f"{int(pre)}\t{int(joint)}\t{r.cost:.6g}\t{r.bpp:.4f}\t{r.psnr_db:.3f}", flush=True)


if __name__ == "__main__":
    main()
