import numpy as np
import pytest

from ovc import numerics as nx


def numeric_grad_check(fn, arrays, eps=1e-3, max_elems=40, seed=0):
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps Tensors to a scalar Tensor.  Runs in float64; the error is
    max |analytic - numeric| over checked entries divided by the largest
    numeric gradient magnitude.  Entries whose stencil crosses a kink of a
    piecewise-linear op (detected by disagreement with a 10x finer stencil)
    are skipped.  Returns the worst error over all inputs.
    """
    rng = np.random.default_rng(seed)
    with nx.precision(np.float64):
        params = [nx.parameter(np.asarray(a, dtype=np.float64)) for a in arrays]
        out = fn(*params)
        out.backward()
        analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]
        worst = 0.0
        for p, g in zip(params, analytic):
            flat = p.data.reshape(-1)
            n = flat.size
            picks = np.arange(n) if n <= max_elems else rng.choice(n, max_elems, replace=False)
            num = np.array([_central(fn, params, flat, i, eps) for i in picks])
            fine = np.array([_central(fn, params, flat, i, eps / 10) for i in picks])
            scale = max(np.abs(num).max(), 1e-8)
            # a stencil straddling a ReLU/clamp kink disagrees with the finer one
            smooth = np.abs(num - fine) <= 1e-4 * scale
            assert smooth.sum() >= max(1, len(picks) // 2), "too many entries sit on kinks"
            ana = g.reshape(-1)[picks]
            worst = max(worst, float(np.abs(ana - num)[smooth].max() / scale))
    return worst


def _central(fn, params, flat, i, eps):
    old = flat[i]
    flat[i] = old + eps
    with nx.no_grad():
        fp = float(fn(*params).data)
    flat[i] = old - eps
    with nx.no_grad():
        fm = float(fn(*params).data)
    flat[i] = old
    return (fp - fm) / (2 * eps)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grad_check():
    return numeric_grad_check


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdict lines, which pytest captures, at the end of the run."""
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if rep.when == "call" and "test_acceptance" in rep.nodeid:
                lines += [ln for ln in rep.capstdout.splitlines() if ln.startswith(("[PASS]", "[FAIL]"))]
    if lines:
        terminalreporter.section("acceptance criteria")
        for ln in sorted(lines, key=lambda s: int(s.split()[1][1:])):
            terminalreporter.write_line(ln)
