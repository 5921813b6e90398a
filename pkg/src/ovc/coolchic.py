"""Cool-chic style decoder: latent pyramid, ARM, upsampler and synthesis.

One ``CoolChicDecoder`` owns a flat latent vector covering its active pyramid
levels plus three small networks.  ``decoder_forward`` is the differentiable
training path; ``fixed_point_arm`` is the integer ARM evaluation used for
entropy coding, exact in int64 so batched (encoder) and per-latent (decoder)
evaluation agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import numerics as nx
from .entropy.laplace import LOG_SCALE_MAX, LOG_SCALE_MIN, P_FLOOR, laplace_mass, rate_bits
from .numerics.tensor import Tensor, make

N_LEVELS = 7
ARM_FRAC_BITS = 16
STEP_EXPONENTS = tuple(range(2, 9))  # parameter steps 2**-2 ... 2**-8


@dataclass(frozen=True)
class SynthLayer:
    k: int
    c_in: int
    c_out: int
    relu: bool = False

    @property
    def residual(self) -> bool:
        return self.k == 3 and self.c_in == self.c_out


@dataclass(frozen=True)
class Architecture:
    kind: str
    arm: tuple  # ((in, out), ...), ReLU between layers
    synthesis: tuple  # SynthLayer, ...
    levels: tuple = tuple(range(N_LEVELS))  # levels carrying latents

    @property
    def context_size(self) -> int:
        return self.arm[0][0]

    @property
    def out_channels(self) -> int:
        return self.synthesis[-1].c_out


def _motion(m: int, kind: str) -> Architecture:
    return Architecture(
        kind,
        arm=((8, 8), (8, 2)),
        synthesis=(SynthLayer(1, 7, 9, True), SynthLayer(1, 9, m), SynthLayer(3, m, m)),
        levels=tuple(range(1, N_LEVELS)),
    )


ARCHITECTURES = {
    "intra": Architecture(
        "intra",
        arm=((24, 24), (24, 24), (24, 2)),
        synthesis=(
            SynthLayer(1, 7, 40, True),
            SynthLayer(1, 40, 3),
            SynthLayer(3, 3, 3, True),
            SynthLayer(3, 3, 3),
        ),
    ),
    "residue": Architecture(
        "residue",
        arm=((8, 8), (8, 8), (8, 2)),
        synthesis=(SynthLayer(1, 7, 28, True), SynthLayer(1, 28, 4), SynthLayer(3, 4, 4)),
    ),
    "motion_p": _motion(2, "motion_p"),
    "motion_b": _motion(5, "motion_b"),
}
KIND_CODES = {"intra": 0, "residue": 1, "motion_p": 2, "motion_b": 3}


# -- ARM context -------------------------------------------------------
@lru_cache(maxsize=None)
def causal_offsets(width: int) -> tuple:
    """The ``width`` nearest already-decoded neighbours as (dy, dx).

    Candidates are positions before the current one in raster order, sorted
    by squared distance, then same-row-first (smaller |dy|), then dx.
    Width 8 gives (0,-1) (-1,0) (-1,-1) (-1,1) (0,-2) (-2,0) (-1,-2) (-1,2);
    width 24 is every causal offset with dy^2 + dx^2 <= 16.
    """
    cand = [(dy, dx) for dy in range(-8, 1) for dx in range(-8, 9) if dy < 0 or dx < 0]
    cand.sort(key=lambda o: (o[0] ** 2 + o[1] ** 2, -o[0], o[1]))
    return tuple(cand[:width])


def arm_context(grid: np.ndarray, width: int, pos: tuple) -> np.ndarray:
    """Causal context of ``grid[pos]``; zeros outside the grid."""
    h, w = grid.shape
    y, x = pos
    out = np.zeros(width, dtype=grid.dtype)
    for i, (dy, dx) in enumerate(causal_offsets(width)):
        yy, xx = y + dy, x + dx
        if 0 <= yy < h and 0 <= xx < w:
            out[i] = grid[yy, xx]
    return out


def level_shape(H: int, W: int, level: int) -> tuple:
    return -(-H // (1 << level)), -(-W // (1 << level))


@dataclass(frozen=True)
class PyramidLayout:
    """Where each active level lives inside the flat latent vector."""

    H: int
    W: int
    levels: tuple
    shapes: tuple
    offsets: tuple
    total: int

    def level_slice(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i] + self.shapes[i][0] * self.shapes[i][1])


@lru_cache(maxsize=64)
def pyramid_layout(H: int, W: int, levels: tuple) -> PyramidLayout:
    shapes, offsets, n = [], [], 0
    for lv in levels:
        s = level_shape(H, W, lv)
        shapes.append(s)
        offsets.append(n)
        n += s[0] * s[1]
    return PyramidLayout(H, W, levels, tuple(shapes), tuple(offsets), n)


@lru_cache(maxsize=64)
def context_index(H: int, W: int, levels: tuple, width: int) -> np.ndarray:
    """(N, width) indices into ``concat(latents, [0])``; index N is the zero pad."""
    lay = pyramid_layout(H, W, levels)
    out = np.full((lay.total, width), lay.total, dtype=np.int64)
    for i, (h, w) in enumerate(lay.shapes):
        ys, xs = np.mgrid[0:h, 0:w]
        base = lay.offsets[i]
        rows = base + (ys * w + xs).ravel()
        for j, (dy, dx) in enumerate(causal_offsets(width)):
            yy, xx = ys + dy, xs + dx
            ok = ((yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)).ravel()
            src = base + (yy * w + xx).ravel()
            out[rows[ok], j] = src[ok]
    out.setflags(write=False)
    return out


# -- rate --------------------------------------------------------------
def rate_of_latent(value, mu, log_scale):
    """Bits of integer ``value`` under Laplace(mu, exp(clamped log_scale))."""
    b = np.exp(np.clip(log_scale, LOG_SCALE_MIN, LOG_SCALE_MAX))
    return rate_bits(value, mu, b)


def laplace_rate(q: Tensor, mu: Tensor, log_scale: Tensor) -> Tensor:
    """Differentiable per-latent bits -log2(max(P, floor)), P the interval mass."""
    qd = q.data.astype(np.float64)
    md = mu.data.astype(np.float64)
    sd = log_scale.data.astype(np.float64)
    b = np.exp(sd)
    u_lo = qd - 0.5 - md
    u_hi = qd + 0.5 - md
    P = laplace_mass(qd, md, b)
    live = P > P_FLOOR
    bits = -np.log2(np.maximum(P, P_FLOOR))
    dt = q.data.dtype

    def back(g):
        f_lo = np.exp(-np.abs(u_lo) / b) / (2 * b)
        f_hi = np.exp(-np.abs(u_hi) / b) / (2 * b)
        scale = np.where(live, -g / (np.maximum(P, P_FLOOR) * math.log(2)), 0.0)
        dq = scale * (f_hi - f_lo)
        ds = scale * (-u_hi * f_hi + u_lo * f_lo)
        return dq.astype(dt), (-dq).astype(dt), ds.astype(dt)

    return make(bits.astype(dt), (q, mu, log_scale), back)


# -- decoder -----------------------------------------------------------
def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class CoolChicDecoder:
    arch: Architecture
    H: int
    W: int
    params: dict = field(default_factory=dict)  # name -> Tensor
    latents: Tensor | None = None

    @classmethod
    def create(cls, kind: str, H: int, W: int, rng: np.random.Generator, head_bias: dict | None = None):
        """Fresh decoder: zero latents, bilinear upsampler, fan-in uniform weights.

        Residual 3x3 layers and the ARM output layer start at zero, so the
        initial synthesis is its 1x1 stack and the initial ARM is (0, 0).
        ``head_bias`` maps output channel -> initial bias of the 1x1 head.
        """
        arch = ARCHITECTURES[kind]
        p = {}
        n_arm = len(arch.arm)
        for i, (ci, co) in enumerate(arch.arm):
            last = i == n_arm - 1
            p[f"arm.{i}.w"] = np.zeros((co, ci)) if last else _uniform(rng, (co, ci), ci)
            p[f"arm.{i}.b"] = np.zeros(co) if last else _uniform(rng, (co,), ci)
        p["up.k"] = nx.bilinear_kernel()
        p["up.b"] = np.zeros(())
        for i, L in enumerate(arch.synthesis):
            fan = L.c_in * L.k * L.k
            if L.residual:
                p[f"syn.{i}.w"] = np.zeros((L.c_out, L.c_in, L.k, L.k))
                p[f"syn.{i}.b"] = np.zeros(L.c_out)
            else:
                p[f"syn.{i}.w"] = _uniform(rng, (L.c_out, L.c_in, L.k, L.k), fan)
                p[f"syn.{i}.b"] = _uniform(rng, (L.c_out,), fan)
        head = max(i for i, L in enumerate(arch.synthesis) if not L.residual)
        for ch, v in (head_bias or {}).items():
            p[f"syn.{head}.b"][ch] = v
        dec = cls(arch, H, W, {k: nx.parameter(v) for k, v in p.items()})
        dec.latents = nx.parameter(np.zeros(dec.layout.total))
        return dec

    @property
    def kind(self) -> str:
        return self.arch.kind

    @property
    def layout(self) -> PyramidLayout:
        return pyramid_layout(self.H, self.W, self.arch.levels)

    def nn_names(self) -> list:
        return list(self.params)

    def trainables(self) -> list:
        return [self.latents] + [self.params[k] for k in self.params]

    def state(self) -> dict:
        s = {k: v.data.copy() for k, v in self.params.items()}
        s["latents"] = self.latents.data.copy()
        return s

    def load_state(self, s: dict):
        for k, v in self.params.items():
            v.data[...] = s[k]
        self.latents.data[...] = s["latents"]

    def copy(self) -> "CoolChicDecoder":
        dec = CoolChicDecoder(self.arch, self.H, self.W, {k: nx.parameter(v.data.copy()) for k, v in self.params.items()})
        dec.latents = nx.parameter(self.latents.data.copy())
        return dec

    def level_grids(self, flat: np.ndarray) -> list:
        lay = self.layout
        return [flat[lay.level_slice(i)].reshape(lay.shapes[i]) for i in range(len(lay.levels))]


def arm_forward(dec: CoolChicDecoder, q: Tensor):
    """Teacher-forced ARM over every latent: returns (mu, log_scale) tensors."""
    lay = dec.layout
    idx = context_index(dec.H, dec.W, dec.arch.levels, dec.arch.context_size)
    padded = nx.concat([q, Tensor(np.zeros(1))])
    h = nx.gather(padded, idx)
    n = len(dec.arch.arm)
    for i in range(n):
        h = nx.linear(h, dec.params[f"arm.{i}.w"], dec.params[f"arm.{i}.b"])
        if i < n - 1:
            h = nx.relu(h)
    assert h.shape == (lay.total, 2)
    return h[:, 0], nx.clamp(h[:, 1], LOG_SCALE_MIN, LOG_SCALE_MAX)


def upsample2(x: Tensor, K: Tensor, b: Tensor, out_shape: tuple) -> Tensor:
    """One x2 step: replicate-pad by 2, transposed conv, crop to ``out_shape``.

    Edge replication keeps borders from fading, so a constant grid stays
    constant under the bilinear kernel even when it is only 1x1.
    """
    h, w = out_shape
    y = nx.tconv2d_stride2(nx.pad_edge(x, 2), K, b)
    return y[:, 4:4 + h, 4:4 + w]


def upsample_pyramid(dec: CoolChicDecoder, q: Tensor) -> Tensor:
    """Dense (7, H, W) features: level l goes through l shared transposed convs."""
    lay = dec.layout
    K, b = dec.params["up.k"], dec.params["up.b"]
    grids = {}
    for i, lv in enumerate(lay.levels):
        grids[lv] = q[lay.level_slice(i)].reshape(lay.shapes[i])
    carry = None
    for lv in range(N_LEVELS - 1, 0, -1):
        g = grids.get(lv)
        if g is None:
            g = Tensor(np.zeros(level_shape(dec.H, dec.W, lv)))
        g = g.reshape((1,) + g.shape)
        batch = g if carry is None else nx.concat([g, carry])
        carry = upsample2(batch, K, b, level_shape(dec.H, dec.W, lv - 1))
    g0 = grids.get(0)
    if g0 is None:
        g0 = Tensor(np.zeros((dec.H, dec.W)))
    return nx.concat([g0.reshape((1, dec.H, dec.W)), carry])


def synthesize(dense: Tensor, dec: CoolChicDecoder) -> Tensor:
    x = dense
    for i, L in enumerate(dec.arch.synthesis):
        y = nx.conv2d(x, dec.params[f"syn.{i}.w"], dec.params[f"syn.{i}.b"])
        if L.residual:
            y = x + y
        x = nx.relu(y) if L.relu else y
    return x


def decoder_forward(dec: CoolChicDecoder, mode: nx.QuantizerMode, rng=None):
    """(synthesis output, total latent rate in bits) under quantizer ``mode``."""
    q = nx.quantize(dec.latents, mode, rng)
    mu, log_scale = arm_forward(dec, q)
    rate = laplace_rate(q, mu, log_scale).sum()
    out = synthesize(upsample_pyramid(dec, q), dec)
    nx.tensor.check_finite(out, f"{dec.kind} decoder output")
    nx.tensor.check_finite(rate, f"{dec.kind} latent rate")
    return out, rate


def decode_output(dec: CoolChicDecoder) -> np.ndarray:
    """Inference-only synthesis from the rounded latents."""
    with nx.no_grad():
        q = Tensor(np.rint(dec.latents.data))
        return synthesize(upsample_pyramid(dec, q), dec).data


# -- parameter quantization --------------------------------------------
@dataclass
class QuantizedTensor:
    exponent: int  # step = 2**-exponent
    values: np.ndarray  # int64, same shape as the float tensor

    @property
    def step(self) -> float:
        return 2.0 ** -self.exponent

    def dequantize(self, dtype=np.float32) -> np.ndarray:
        return (self.values * self.step).astype(dtype)

    @property
    def scale(self) -> float:
        """Laplace scale of the integer values (their mean magnitude)."""
        return float(np.float32(np.abs(self.values).mean())) if self.values.size else 0.0


def quantize_tensor(w: np.ndarray, exponent: int) -> QuantizedTensor:
    v = np.rint(np.asarray(w, dtype=np.float64) * (1 << exponent)).astype(np.int64)
    return QuantizedTensor(exponent, np.clip(v, -(1 << 15), (1 << 15) - 1))


def param_bits_estimate(qt: QuantizedTensor) -> float:
    b = max(qt.scale, math.exp(LOG_SCALE_MIN))
    return float(rate_bits(qt.values, 0.0, b).sum())


def quantize_decoder_params(dec: CoolChicDecoder, cost_fn=None, lam: float = 0.0, n_pixels: int = 1):
    """Greedy per-tensor step search minimising ``cost_fn(dec) + lam * bits / n_pixels``.

    ``cost_fn`` evaluates the decoder as currently loaded (D + lam * latent
    rate).  Tensors are visited in a fixed order; each keeps the step with the
    lowest total cost given the tensors already fixed.  The decoder is left
    holding the dequantized parameters.  Returns (quantized dict, bits).
    """
    out = {}
    for name in dec.nn_names():
        t = dec.params[name]
        orig = t.data.copy()
        best = None
        for e in STEP_EXPONENTS:
            qt = quantize_tensor(orig, e)
            bits = param_bits_estimate(qt)
            t.data[...] = qt.dequantize(t.data.dtype)
            cost = (cost_fn(dec) if cost_fn is not None else 0.0) + lam * bits / n_pixels
            if cost_fn is None:
                cost = -e  # no criterion: finest step
            if best is None or cost < best[0]:
                best = (cost, qt)
        out[name] = best[1]
        t.data[...] = best[1].dequantize(t.data.dtype)
    return out, sum(param_bits_estimate(q) for q in out.values())


def load_quantized(dec: CoolChicDecoder, qparams: dict):
    for name, qt in qparams.items():
        dec.params[name].data[...] = qt.dequantize(dec.params[name].data.dtype)


def integer_latents(dec: CoolChicDecoder) -> np.ndarray:
    return np.clip(np.rint(dec.latents.data), -(1 << 15), (1 << 15) - 1).astype(np.int64)


# -- fixed-point ARM ---------------------------------------------------
def _fx_layers(qparams: dict, n_layers: int):
    F = ARM_FRAC_BITS
    layers = []
    for i in range(n_layers):
        w = qparams[f"arm.{i}.w"]
        b = qparams[f"arm.{i}.b"]
        bias = b.values << (F + w.exponent - b.exponent) if F + w.exponent >= b.exponent else None
        if bias is None:
            raise ValueError("bias step finer than the fixed-point accumulator")
        layers.append((w.values, bias, w.exponent))
    return layers


def fixed_point_arm(qparams: dict, n_layers: int, ctx: np.ndarray):
    """Integer ARM on integer contexts (N, width) -> (mu, log_scale) float64.

    Activations carry ``ARM_FRAC_BITS`` fractional bits; after each layer the
    accumulator is rounded back with an arithmetic shift.
    """
    F = ARM_FRAC_BITS
    a = np.asarray(ctx, dtype=np.int64) << F
    for i, (w, bias, e) in enumerate(_fx_layers(qparams, n_layers)):
        if a.size and float(np.abs(a).max()) * float(np.abs(w).sum(axis=1).max() + 1) >= 2.0**61:
            raise OverflowError("fixed-point ARM accumulator overflow")
        acc = a @ w.T + bias
        a = (acc + (1 << (e - 1))) >> e
        if i < n_layers - 1:
            a = np.maximum(a, 0)
    out = a.astype(np.float64) * 2.0**-F
    return out[..., 0], np.clip(out[..., 1], LOG_SCALE_MIN, LOG_SCALE_MAX)


def coding_distribution(dec: CoolChicDecoder, qparams: dict, values: np.ndarray):
    """(mu, log_scale) used to entropy code ``values`` (flat integer latents)."""
    idx = context_index(dec.H, dec.W, dec.arch.levels, dec.arch.context_size)
    padded = np.concatenate([values, [0]])
    return fixed_point_arm(qparams, len(dec.arch.arm), padded[idx])


@lru_cache(maxsize=None)
def param_shapes(kind: str) -> tuple:
    """Canonical (name, shape) order of a decoder kind's NN tensors."""
    dec = CoolChicDecoder.create(kind, 64, 64, np.random.default_rng(0))
    return tuple((k, v.shape) for k, v in dec.params.items())


def decoder_from_quantized(kind: str, H: int, W: int, qparams: dict, latents: np.ndarray) -> CoolChicDecoder:
    arch = ARCHITECTURES[kind]
    params = {name: nx.parameter(qparams[name].dequantize()) for name, _ in param_shapes(kind)}
    dec = CoolChicDecoder(arch, H, W, params)
    dec.latents = nx.parameter(np.asarray(latents, dtype=np.float32))
    return dec
