import numpy as np
import pytest

ACCEPTANCE_LINES: list[str] = []


def loop_conv2d(x, w, stride=1):
    """Scalar six-loop cross-correlation; x: (Cin, H, W), w: (Cout, Cin, R, C)."""
    cin, H, W = x.shape
    cout, _, R, C = w.shape
    Ho, Wo = (H - R) // stride + 1, (W - C) // stride + 1
    y = np.zeros((cout, Ho, Wo))
    for o in range(cout):
        for i in range(Ho):
            for j in range(Wo):
                acc = 0.0
                for c in range(cin):
                    for a in range(R):
                        for b in range(C):
                            acc += x[c, stride * i + a, stride * j + b] * w[o, c, a, b]
                y[o, i, j] = acc
    return y


def loop_conv1d(x, w, stride=1):
    n = (len(x) - len(w)) // stride + 1
    return np.array([sum(x[stride * i + k] * w[k] for k in range(len(w))) for i in range(n)])


def rel_err(y, ref):
    return float(np.abs(np.asarray(y) - ref).max() / np.abs(ref).max())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
