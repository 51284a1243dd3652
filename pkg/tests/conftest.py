import numpy as np
import pytest
import torch

from hyperseg.nn import set_deterministic

set_deterministic(1)


def ball_points(rng, n, d, radius=0.9):
    """Uniform-in-volume points of the ball of the given radius, float64 tensor ``(n, d)``."""
    x = rng.normal(size=(n, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    r = radius * rng.uniform(size=(n, 1)) ** (1.0 / d)
    return torch.from_numpy(x * r)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def fd_gradcheck(fn, inputs, h=1e-4):
    """Largest per-entry relative error between autograd and central differences.

    ``fn`` maps the list of f64 ``inputs`` to a scalar; every input is perturbed
    entry by entry.
    """
    inputs = [x.detach().clone().requires_grad_() for x in inputs]
    fn(*inputs).backward()
    worst = 0.0
    for j, x in enumerate(inputs):
        auto = x.grad.reshape(-1)
        flat = x.detach().reshape(-1)
        for i in range(flat.numel()):
            args = [y.detach() for y in inputs]
            plus, minus = flat.clone(), flat.clone()
            plus[i] += h
            minus[i] -= h
            with torch.no_grad():
                hi = fn(*(args[:j] + [plus.reshape(x.shape)] + args[j + 1:]))
                lo = fn(*(args[:j] + [minus.reshape(x.shape)] + args[j + 1:]))
            fd = float(hi - lo) / (2 * h)
            a = float(auto[i])
            worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-6))
    return worst


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
