import numpy as np
import pytest

from siamcd.model import ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Canonical small network: two levels, 16x16 input."""
    return ModelConfig(fusion="abs-difference", gated=True, encoder_filters=(2, 4), input_size=(16, 16))


# --- independent reference implementations (plain loops) -------------------


def conv2d_loops(x, w, b, pad):
    c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    xp = np.zeros((c_in, h + 2 * pad, wd + 2 * pad))
    xp[:, pad : pad + h, pad : pad + wd] = x
    ho, wo = h + 2 * pad - k + 1, wd + 2 * pad - k + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for y in range(ho):
            for x_ in range(wo):
                acc = b[o]
                for c in range(c_in):
                    for i in range(k):
                        for j in range(k):
                            acc += w[o, c, i, j] * xp[c, y + i, x_ + j]
                out[o, y, x_] = acc
    return out


def conv_transpose_loops(x, w):
    c_in, h, wd = x.shape
    c_out = w.shape[1]
    out = np.zeros((c_out, 2 * h, 2 * wd))
    for c in range(c_in):
        for y in range(h):
            for x_ in range(wd):
                for o in range(c_out):
                    for a in range(2):
                        for b in range(2):
                            out[o, 2 * y + a, 2 * x_ + b] += x[c, y, x_] * w[c, o, a, b]
    return out


def maxpool_loops(x):
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2))
    for k in range(c):
        for y in range(h // 2):
            for x_ in range(w // 2):
                out[k, y, x_] = max(x[k, 2 * y + a, 2 * x_ + b] for a in range(2) for b in range(2))
    return out


def matmul_loops(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def generic_biases(state, rng, scale=0.1):
    """Zero-initialised biases put dead-neighbourhood pre-activations exactly
    on the ReLU kink, where finite differences are meaningless.  Random
    biases move the evaluation point off every kink."""
    for name, p in state.params.items():
        if name.endswith("bias"):
            p.data[...] = rng.uniform(-scale, scale, p.shape)
    return state


def network_grad_report(fusion, seed, gated=True):
    from siamcd.gradcheck import grad_check
    from siamcd.model import ModelConfig, build, forward
    from siamcd.objective import total_loss

    rng = np.random.default_rng(seed)
    cfg = ModelConfig(fusion=fusion, gated=gated, encoder_filters=(2, 4), input_size=(16, 16))
    state = generic_biases(build(cfg, seed, dtype=np.float64), rng)
    t1, t2 = rng.uniform(size=(2, 3, 16, 16))
    label = (rng.uniform(size=(1, 16, 16)) > 0.7).astype(np.float64)
    return grad_check(lambda *_: total_loss(label, forward(state, t1, t2), beta=2.0), state.parameters())


# --- acceptance summary -------------------------------------------------------

ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
