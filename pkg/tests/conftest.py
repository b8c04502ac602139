import numpy as np
import pytest

from sfiqa.tensor import Tensor

FD_STEP = 1e-6


def numeric_grad(fn, arrays, index, step=FD_STEP):
    """Central finite differences of scalar fn(*arrays) w.r.t. arrays[index]."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    x = base[index]
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + step
        fp = fn(*[Tensor(a) for a in base]).item()
        x[i] = old - step
        fm = fn(*[Tensor(a) for a in base]).item()
        x[i] = old
        g[i] = (fp - fm) / (2 * step)
    return g


def analytic_grads(fn, arrays):
    ts = [Tensor(a, requires_grad=True) for a in arrays]
    fn(*ts).backward()
    return [t.grad for t in ts]


def rel_err(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def gradcheck(fn, arrays, step=FD_STEP):
    """Largest relative error between backward() and finite differences over all inputs."""
    grads = analytic_grads(fn, arrays)
    return max(rel_err(g, numeric_grad(fn, arrays, i, step)) for i, g in enumerate(grads))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
