import numpy as np
import pytest

from cnnfix.fixtures import SplitMix64


def conv_reference(x, w, b, stride, pad):
    """Direct nested-loop convolution."""
    C, H, W = x.shape
    K, _, k, _ = w.shape
    oh = (H + 2 * pad - k) // stride + 1
    ow = (W + 2 * pad - k) // stride + 1
    out = np.zeros((K, oh, ow))
    for f in range(K):
        for i in range(oh):
            for j in range(ow):
                s = float(b[f])
                for c in range(C):
                    for u in range(k):
                        for v in range(k):
                            r, q = i * stride - pad + u, j * stride - pad + v
                            if 0 <= r < H and 0 <= q < W:
                                s += float(x[c, r, q]) * float(w[f, c, u, v])
                out[f, i, j] = s
    return out


@pytest.fixture
def rng():
    return SplitMix64(20240611)


@pytest.fixture
def nprng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
