"""Property-based checks with hypothesis."""

import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ovc import numerics as nx
from ovc.entropy import laplace as lp
from ovc.flow import read_flo, write_flo
from ovc.metrics import RdPoint, bd_rate
from ovc.numerics.quant import softround_np
from ovc.video import gop as gopmod
from ovc.video.pipeline import blend, to_yuv420, warp

floats = st.floats(-4, 4, allow_nan=False, width=32)
fast = settings(max_examples=40, deadline=None)


@fast
@given(st.integers(0, 2 ** 32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_conv_tconv_linear(seed, a, b):
    r = np.random.default_rng(seed)
    x, y = r.normal(size=(3, 6, 5)), r.normal(size=(3, 6, 5))
    W, zb = nx.Tensor(r.normal(size=(4, 3, 3, 3))), nx.Tensor(np.zeros(4))
    with nx.precision(np.float64), nx.no_grad():
        lhs = nx.conv2d(nx.Tensor(a * x + b * y), W, zb).data
        rhs = a * nx.conv2d(nx.Tensor(x), W, zb).data + b * nx.conv2d(nx.Tensor(y), W, zb).data
        assert np.allclose(lhs, rhs, atol=1e-5)
        K, z = nx.Tensor(r.normal(size=(8, 8))), nx.Tensor(np.zeros(()))
        lhs = nx.tconv2d_stride2(nx.Tensor(a * x[0] + b * y[0]), K, z).data
        rhs = a * nx.tconv2d_stride2(nx.Tensor(x[0]), K, z).data + b * nx.tconv2d_stride2(nx.Tensor(y[0]), K, z).data
        assert np.allclose(lhs, rhs, atol=1e-5)


@fast
@given(arrays(np.float32, st.integers(1, 50), elements=st.floats(-1000, 1000, width=32)))
def test_hard_round_is_integer(x):
    out = nx.quantize(nx.Tensor(x), nx.HARD).data
    assert np.array_equal(out, np.rint(out))


@fast
@given(arrays(np.float64, 30, elements=st.floats(-50, 50)))
def test_softround_limit(x):
    frac = np.abs(x - np.floor(x) - 0.5)
    keep = frac > 0.05
    assert np.all(np.abs(softround_np(x, 1e-4) - np.rint(x))[keep] < 1e-3)


@fast
@given(st.lists(st.tuples(st.integers(-(1 << 15), (1 << 15) - 1), st.floats(-100, 100), st.floats(-6, 6)),
                min_size=1, max_size=60))
def test_symbol_round_trip(items):
    v = np.array([i[0] for i in items], dtype=np.int64)
    mu = np.array([i[1] for i in items])
    b = np.exp([i[2] for i in items])
    data = lp.encode_values(v, mu, b)
    assert np.array_equal(lp.decode_values(data, mu, b), v)


@fast
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 9), st.integers(2, 9))
def test_zero_warp_identity(seed, h, w):
    ref = np.random.default_rng(seed).random((3, h, w)).astype(np.float32)
    assert np.array_equal(warp(ref, np.zeros((2, h, w), np.float32)).data, ref)


@fast
@given(st.integers(0, 2 ** 32 - 1))
def test_blend_convex(seed):
    r = np.random.default_rng(seed)
    r1, r2 = r.random((3, 6, 6)), r.random((3, 6, 6))
    v1, v2 = r.normal(0, 3, (2, 6, 6)), r.normal(0, 3, (2, 6, 6))
    out = blend(r1, r2, v1, v2, r.random((6, 6))).data
    w1, w2 = warp(r1, v1).data, warp(r2, v2).data
    assert (out >= np.minimum(w1, w2) - 1e-9).all() and (out <= np.maximum(w1, w2) + 1e-9).all()


@fast
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 6), st.integers(1, 6))
def test_yuv420_preserves_mean(seed, h, w):
    x = np.random.default_rng(seed).random((3, 2 * h, 2 * w))
    _, u, v = to_yuv420(x)
    assert abs(u.data.mean() - x[1].mean()) < 1e-6 and abs(v.data.mean() - x[2].mean()) < 1e-6


@fast
@given(st.integers(1, 40), st.sampled_from(sorted(gopmod.NAMES)))
def test_gop_valid(n, name):
    g = gopmod.build(gopmod.NAMES[name], n)
    assert sorted(g.decode_order) == list(range(n))
    seen = set()
    for f in g.frames:
        assert set(f.refs) <= seen and all(r != f.index for r in f.refs)
        seen.add(f.index)


@settings(max_examples=20, deadline=None)
@given(arrays(np.float32, st.tuples(st.just(2), st.integers(1, 5), st.integers(1, 5)), elements=floats))
def test_flo_round_trip(tmp_path_factory, f):
    p = tmp_path_factory.mktemp("flo") / "f.flo"
    write_flo(p, f)
    assert np.array_equal(read_flo(p), f)


@fast
@given(st.floats(0.5, 2.0), st.floats(-0.3, 0.3))
def test_bd_rate_scaling(k, dq):
    base = [RdPoint(r, q) for r, q in ((0.05, 30.1), (0.11, 32.4), (0.24, 35.0), (0.52, 37.9), (1.1, 40.6))]
    scaled = [RdPoint(p.bpp * k, p.psnr_db) for p in base]
    assert abs(bd_rate(base, scaled) - (k - 1) * 100) < 1e-6 * 100
