"""Per-frame rate shares with and without the joint stage (static or panning content)."""

import argparse

from ovc.encoder import EncoderConfig, encode_video
from ovc.synthetic import moving_sequence, static_sequence


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--step", type=int, default=0, help="pan in px/frame, 0 = static")
    ap.add_argument("--lam", type=float, default=0.01)
    ap.add_argument("--frame-iters", type=int, default=200)
    ap.add_argument("--joint-iters", type=int, default=300)
    a = ap.parse_args()

    frames = static_sequence(9, a.size) if a.step == 0 else moving_sequence(9, a.size, a.step)
    shares = {}
    for joint in (False, True):
        cfg = EncoderConfig(lam=a.lam, pretrain_iters=100, frame_iters=a.frame_iters,
                            joint_iters=a.joint_iters, skip_joint=not joint)
        r = encode_video(frames, cfg).report
        total = sum(f.latent_bits for f in r.frames) or 1
        shares[joint] = {f.index: f.latent_bits / total for f in r.frames}
    print("frame\tframewise_share\tjoint_share")
    for t in range(9):
        print(f"{t}\t{shares[False][t]:.4f}\t{shares[True][t]:.4f}")


if __name__ == "__main__":
    main()
