"""Overfitting a GOP: motion pre-training, frame-wise RD, joint RD, then coding.

Units used throughout: distortion D is the MSE over all 4:2:0 samples of a
frame in [0, 1]; rate R is latent bits divided by the coded pixel count.
The frame cost is D + lambda * R and the GOP cost is the sum over frames.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import numerics as nx
from .coolchic import (
    CoolChicDecoder,
    coding_distribution,
    decode_output,
    decoder_forward,
    integer_latents,
    quantize_decoder_params,
    rate_of_latent,
)
from .entropy.bitstream import DecoderPayload, FrameRecord, GopHeader, decoder_kinds, write_gop
from .flow import check_flow, estimate_flow, read_flo
from .metrics import bpp as bpp_of, psnr, video_psnr
from .numerics.tensor import NonFiniteError, Tensor
from .video import gop as gopmod
from .video.pipeline import (
    crop_planes,
    frame_from_outputs,
    from_samples,
    motion_fields,
    pad_planes,
    to_samples,
    to_yuv420,
    yuv420_mse,
)

log = logging.getLogger(__name__)

STANDARD_LAMBDAS = (0.05, 0.01, 0.0025, 0.001, 0.0005)


class TrainingError(RuntimeError):
    """A training stage diverged; the message names the stage and frame."""


class ConfigError(ValueError):
    pass


@dataclass
class EncoderConfig:
    lam: float = 0.01
    pretrain_iters: int = 2000
    frame_iters: int = 2000
    joint_iters: int = 10000
    seed: int = 0
    gop: str = "ra"  # ra | ld | intra
    flow_source: str = "builtin"  # builtin | path to a directory of .flo files
    skip_pretrain: bool = False
    skip_joint: bool = False
    lambda_v_factor: float = 20.0
    lr: float = 1e-2
    lr_min: float = 1e-4
    # the joint stage fine-tunes trained decoders: lower peak LR, milder noise
    joint_lr: float = 1e-3
    joint_noise: tuple = (0.3, 0.1)
    checkpoint_every: int = 100

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if self.gop not in gopmod.NAMES:
            raise ConfigError(f"unknown GOP structure {self.gop!r}; choose from {sorted(gopmod.NAMES)}")
        for k in ("pretrain_iters", "frame_iters", "joint_iters"):
            if getattr(self, k) < 0:
                raise ConfigError(f"{k} must be >= 0")

    @property
    def lambda_v(self) -> float:
        return self.lambda_v_factor * self.lam

    @classmethod
    def from_file(cls, path, **overrides) -> "EncoderConfig":
        data = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)


# -- schedule ----------------------------------------------------------
@dataclass(frozen=True)
class Schedule:
    """Noise (70%) -> softround (25%) -> hard rounding (5%); cosine LR per phase."""

    total: int
    lr: float = 1e-2
    lr_min: float = 1e-4
    noise: tuple = (1.0, 0.1)
    temperature: tuple = (0.3, 0.01)
    fractions: tuple = (0.70, 0.25)

    def phases(self) -> list:
        a = round(self.fractions[0] * self.total)
        b = round(self.fractions[1] * self.total)
        return [("noise", a), ("softround", b), ("hard", self.total - a - b)]

    def at(self, it: int):
        """(QuantizerMode, learning rate) at iteration ``it``."""
        start = 0
        for name, n in self.phases():
            if it < start + n:
                k = it - start
                p = k / max(n - 1, 1)
                cos = 0.5 * (1.0 + math.cos(math.pi * p))
                lr = self.lr_min + (self.lr - self.lr_min) * cos
                if name == "noise":
                    a0, a1 = self.noise
                    return nx.QuantizerMode.noise(a0 + (a1 - a0) * p), lr
                if name == "softround":
                    t0, t1 = self.temperature
                    return nx.QuantizerMode.softround(t1 + (t0 - t1) * cos), lr
                return nx.HARD, lr
            start += n
        raise IndexError(f"iteration {it} beyond schedule of {self.total}")


def optimize(params, loss_fn, eval_fn, schedule: Schedule, rng, every: int = 100, stage: str = ""):
    """Run ``schedule`` with Adam; keep the iterate with the lowest hard-round cost.

    ``loss_fn(mode, rng)`` returns a scalar Tensor; ``eval_fn()`` the true
    cost as a float.  The cost is checked at iteration 0, every ``every``
    iterations and at the end.  Returns the loss curve and the best cost.
    """
    opt = nx.Adam(params, lr=schedule.lr)
    best_cost = eval_fn()
    best = [p.data.copy() for p in params]
    curve = [(0, best_cost)]
    for it in range(schedule.total):
        mode, opt.lr = schedule.at(it)
        opt.zero_grad()
        try:
            loss = loss_fn(mode, rng)
            loss.backward()
            opt.step()
        except NonFiniteError as exc:
            raise TrainingError(f"{stage}: diverged at iteration {it} ({mode.kind}): {exc}") from exc
        if (it + 1) % every == 0 or it + 1 == schedule.total:
            c = eval_fn()
            curve.append((it + 1, c))
            if c < best_cost:
                best_cost = c
                best = [p.data.copy() for p in params]
    for p, b in zip(params, best):
        p.data[...] = b
    return curve, best_cost


# -- per-frame state ---------------------------------------------------
ROLE_KIND = {"intra": "intra", "residue": "residue"}


@dataclass
class FrameCoder:
    spec: gopmod.FrameSpec
    decoders: dict  # role -> CoolChicDecoder; roles: intra | motion, residue
    target: tuple  # (Y, U, V) float arrays in [0, 1], padded
    guides: list = field(default_factory=list)  # flows per reference slot

    @property
    def H(self) -> int:
        return self.target[0].shape[0]

    @property
    def W(self) -> int:
        return self.target[0].shape[1]

    def trainables(self, roles=None) -> list:
        out = []
        for role, dec in self.decoders.items():
            if roles is None or role in roles:
                out += dec.trainables()
        return out


def new_frame_coder(spec, target, H, W, rng) -> FrameCoder:
    if spec.kind == "I":
        decs = {"intra": CoolChicDecoder.create("intra", H, W, rng)}
    else:
        mk = "motion_p" if spec.kind == "P" else "motion_b"
        head = {} if spec.kind == "P" else {4: 0.5}
        decs = {
            "motion": CoolChicDecoder.create(mk, H, W, rng, head_bias=head),
            "residue": CoolChicDecoder.create("residue", H, W, rng, head_bias={3: 1.0}),
        }
    return FrameCoder(spec, decs, tuple(np.asarray(t, dtype=np.float32) for t in target))


def frame_forward(fc: FrameCoder, refs: list, mode, rng):
    """(reconstruction, distortion, latent bits) as Tensors."""
    outs, bits = {}, None
    for role, dec in fc.decoders.items():
        o, r = decoder_forward(dec, mode, rng)
        outs[role] = o
        bits = r if bits is None else bits + r
    xhat = frame_from_outputs(fc.spec.kind, outs, refs)
    dist = yuv420_mse(to_yuv420(xhat), [Tensor(t) for t in fc.target])
    return xhat, dist, bits


def frame_cost(fc: FrameCoder, refs, lam, mode, rng):
    xhat, d, bits = frame_forward(fc, refs, mode, rng)
    return xhat, d + bits * (lam / (fc.H * fc.W)), d, bits


def infer_frame(kind: str, decoders: dict, refs: list) -> np.ndarray:
    """Decoder-side reconstruction from rounded latents (shared with the encoder)."""
    with nx.no_grad():
        outs = {role: Tensor(decode_output(dec)) for role, dec in decoders.items()}
        return frame_from_outputs(kind, outs, [Tensor(r) for r in refs]).data


# -- stages --------------------------------------------------------------
def _schedule(n: int, cfg: EncoderConfig) -> Schedule:
    return Schedule(n, lr=cfg.lr, lr_min=cfg.lr_min)


def pretrain_motion(fc: FrameCoder, lambda_v: float, iters: int, cfg: EncoderConfig, rng) -> list:
    """Fit the motion decoder alone to the guide flows (flow MSE + lambda_v * rate)."""
    if fc.spec.kind == "I":
        return []
    need = len(fc.spec.refs)
    if len(fc.guides) != need or any(g is None for g in fc.guides):
        raise ConfigError(f"frame {fc.spec.index}: motion pre-training needs {need} guide flows")
    dec = fc.decoders["motion"]
    guides = [Tensor(np.asarray(g, dtype=np.float32)) for g in fc.guides]
    n_px = fc.H * fc.W

    def loss(mode, rng_):
        out, bits = decoder_forward(dec, mode, rng_)
        v1, v2, _ = motion_fields(out, fc.spec.kind)
        d = nx.mse(v1, guides[0])
        if v2 is not None:
            d = d + nx.mse(v2, guides[1])
        return d + bits * (lambda_v / n_px)

    def evaluate():
        with nx.no_grad():
            return float(loss(nx.HARD, None).data)

    curve, _ = optimize(dec.trainables(), loss, evaluate, _schedule(iters, cfg), rng, cfg.checkpoint_every,
                        f"pretrain frame {fc.spec.index}")
    return curve


def encode_frame(fc: FrameCoder, refs: list, lam: float, iters: int, cfg: EncoderConfig, rng) -> list:
    """Frame-wise RD optimisation of all the frame's decoders, references fixed."""
    ref_t = [Tensor(r) for r in refs]

    def loss(mode, rng_):
        return frame_cost(fc, ref_t, lam, mode, rng_)[1]

    def evaluate():
        with nx.no_grad():
            return float(loss(nx.HARD, None).data)

    curve, _ = optimize(fc.trainables(), loss, evaluate, _schedule(iters, cfg), rng, cfg.checkpoint_every,
                        f"frame-wise stage, frame {fc.spec.index}")
    return curve


def gop_forward(coders: dict, structure: gopmod.GopStructure, lam: float, mode, rng):
    """Sum of frame costs with reconstructions feeding their dependents."""
    recon, total, per = {}, None, {}
    for spec in structure.frames:
        fc = coders[spec.index]
        xhat, cost, d, bits = frame_cost(fc, [recon[r] for r in spec.refs], lam, mode, rng)
        recon[spec.index] = xhat
        per[spec.index] = (cost, d, bits)
        total = cost if total is None else total + cost
    return total, per, recon


def gop_cost(coders, structure, lam) -> float:
    with nx.no_grad():
        return float(gop_forward(coders, structure, lam, nx.HARD, None)[0].data)


def joint_optimize(coders: dict, structure, lam: float, iters: int, cfg: EncoderConfig, rng) -> list:
    """Optimise every frame's latents and networks against the single GOP cost."""
    params = []
    for spec in structure.frames:
        params += coders[spec.index].trainables()

    def loss(mode, rng_):
        return gop_forward(coders, structure, lam, mode, rng_)[0]

    curve, _ = optimize(params, loss, lambda: gop_cost(coders, structure, lam),
                        Schedule(iters, lr=cfg.joint_lr, lr_min=cfg.lr_min, noise=tuple(cfg.joint_noise)), rng,
                        cfg.checkpoint_every, "joint stage")
    return curve


# -- report --------------------------------------------------------------
@dataclass
class FrameReport:
    index: int
    kind: str
    bits: int
    motion_bits: int
    residue_bits: int
    param_bits: int
    latent_bits: int
    estimated_latent_bits: float
    psnr_db: float
    mse: float


@dataclass
class EncodeReport:
    width: int
    height: int
    n_frames: int
    lam: float
    lambda_v: float
    total_bytes: int
    header_bytes: int
    bpp: float
    psnr_db: float
    cost: float  # GOP cost of the transmitted decoders
    cost_before_quantization: float
    frames: list = field(default_factory=list)
    stages: dict = field(default_factory=dict)  # stage -> [(iteration, cost)]
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    def rate_table(self) -> str:
        """TSV rate distribution per frame (display order)."""
        rows = ["frame\tkind\tbits\tmotion_bits\tresidue_bits\tparam_bits\tlatent_bits\tpsnr_db\tshare"]
        total = sum(f.bits for f in self.frames) or 1
        for f in sorted(self.frames, key=lambda f: f.index):
            rows.append(f"{f.index}\t{f.kind}\t{f.bits}\t{f.motion_bits}\t{f.residue_bits}\t"
                        f"{f.param_bits}\t{f.latent_bits}\t{f.psnr_db:.4f}\t{f.bits / total:.6f}")
        return "\n".join(rows) + "\n"


@dataclass
class EncodeResult:
    bitstream: bytes
    report: EncodeReport
    decoded: list  # display-order (Y, U, V) uint16 planes, cropped
    coders: dict


def _flow_guides(spec, originals, cfg: EncoderConfig, H, W):
    out = []
    for r in spec.refs:
        if cfg.flow_source == "builtin":
            g = estimate_flow(originals[spec.index][0] * 255.0, originals[r][0] * 255.0)
        else:
            g = read_flo(Path(cfg.flow_source) / f"flow_{spec.index:03d}_{r:03d}.flo")
        out.append(check_flow(g, H, W))
    return out


def lambda_index(lam: float) -> int:
    for i, v in enumerate(STANDARD_LAMBDAS):
        if math.isclose(lam, v, rel_tol=1e-9):
            return i
    return 255


def encode_video(frames, cfg: EncoderConfig, bit_depth: int = 8) -> EncodeResult:
    """Encode a GOP of (Y, U, V) integer planes; returns bitstream, report and decoded frames."""
    n = len(frames)
    if n < 1:
        raise ConfigError("nothing to encode")
    h0, w0 = frames[0][0].shape
    if h0 % 2 or w0 % 2:
        raise ConfigError(f"frame dimensions must be even, got {w0}x{h0}")
    structure = gopmod.build(gopmod.NAMES[cfg.gop], n)
    padded = [pad_planes(from_samples(f, bit_depth)) for f in frames]
    H, W = padded[0][0].shape
    rng = nx.make_rng(cfg.seed)
    coders = {s.index: new_frame_coder(s, padded[s.index], H, W, rng) for s in structure.frames}
    stages = {}

    # an inter frame whose pre-training is skipped gets that budget in the frame-wise stage
    def frame_iters(spec):
        return cfg.frame_iters + (cfg.pretrain_iters if cfg.skip_pretrain and spec.kind != "I" else 0)

    for spec in structure.frames:
        fc = coders[spec.index]
        if spec.kind != "I" and not cfg.skip_pretrain:
            fc.guides = _flow_guides(spec, padded, cfg, H, W)
            stages[f"pretrain/{spec.index}"] = pretrain_motion(fc, cfg.lambda_v, cfg.pretrain_iters, cfg, rng)
    recon = {}
    for spec in structure.frames:
        fc = coders[spec.index]
        refs = [recon[r] for r in spec.refs]
        stages[f"frame/{spec.index}"] = encode_frame(fc, refs, cfg.lam, frame_iters(spec), cfg, rng)
        with nx.no_grad():
            recon[spec.index] = frame_forward(fc, [Tensor(r) for r in refs], nx.HARD, None)[0].data
    if not cfg.skip_joint and n > 0:
        stages["joint"] = joint_optimize(coders, structure, cfg.lam, cfg.joint_iters, cfg, rng)
    cost_float = gop_cost(coders, structure, cfg.lam)

    # quantise networks frame by frame against the transmitted references
    records, final, est_bits, cost = [], {}, {}, 0.0
    for spec in structure.frames:
        fc = coders[spec.index]
        refs = [final[r] for r in spec.refs]
        ref_t = [Tensor(r) for r in refs]

        def cost_fn(_dec, fc=fc, ref_t=ref_t):
            with nx.no_grad():
                return float(frame_cost(fc, ref_t, cfg.lam, nx.HARD, None)[1].data)

        payloads, est = [], 0.0
        for role, dec in fc.decoders.items():
            qp, _ = quantize_decoder_params(dec, cost_fn, cfg.lam, H * W)
            ints = integer_latents(dec)
            dec.latents.data[...] = ints
            mu, ls = coding_distribution(dec, qp, ints)
            est += float(rate_of_latent(ints, mu, ls).sum())
            payloads.append(DecoderPayload(dec.kind, qp, ints))
        final[spec.index] = infer_frame(spec.kind, fc.decoders, refs)
        with nx.no_grad():
            d = yuv420_mse(to_yuv420(Tensor(final[spec.index])), [Tensor(t) for t in fc.target])
        cost += float(d.data) + cfg.lam * est / (H * W)
        est_bits[spec.index] = est
        records.append(FrameRecord(spec.index, spec.kind, spec.refs, payloads))

    header = GopHeader(w0, h0, bit_depth, n, structure.gop_id, lambda_index(cfg.lam), cfg.lam)
    data, stats = write_gop(header, records)
    decoded = output_frames(final, n, h0, w0, bit_depth)

    frame_reports = []
    for spec, st in zip(structure.frames, stats.frames):
        mse = float(np.mean([(a.astype(float) - b.astype(float)) ** 2 for a, b in
                             zip(_flat_planes(frames[spec.index]), _flat_planes(decoded[spec.index]))]))
        frame_reports.append(FrameReport(
            spec.index, spec.kind, st.total_bytes * 8, st.motion_bytes * 8, st.residue_bytes * 8,
            st.param_bytes * 8, st.latent_bytes * 8, est_bits[spec.index],
            psnr(frames[spec.index], decoded[spec.index], bit_depth), mse))
    report = EncodeReport(
        width=w0, height=h0, n_frames=n, lam=cfg.lam, lambda_v=cfg.lambda_v,
        total_bytes=len(data), header_bytes=stats.header_bytes,
        bpp=bpp_of(len(data), w0, h0, n), psnr_db=video_psnr(frames, decoded, bit_depth),
        cost=cost, cost_before_quantization=cost_float,
        frames=frame_reports, stages=stages, config=asdict(cfg),
    )
    return EncodeResult(data, report, decoded, coders)


def _flat_planes(planes):
    return [np.concatenate([np.asarray(p).ravel() for p in planes])]


def output_frames(recon: dict, n: int, H: int, W: int, bit_depth: int) -> list:
    """Dense reconstructions -> cropped integer 4:2:0 planes in display order."""
    out = []
    for t in range(n):
        with nx.no_grad():
            planes = [p.data for p in to_yuv420(Tensor(recon[t]))]
        out.append(crop_planes(to_samples(planes, bit_depth), H, W))
    return out
