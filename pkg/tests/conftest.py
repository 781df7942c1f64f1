import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


def gauss_legendre_sq_norm(X, coords):
    """Integral of b_{n,H}(t)^2 over [0,1]^h by 2-point Gauss-Legendre on cells split at the data.

    Per axis the integrand is a polynomial of degree <= 2 between breakpoints,
    so the rule is exact up to rounding.
    """
    X = np.asarray(X, float)
    n = X.shape[0]
    nodes, weights = [], []
    g = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    for j in coords:
        br = np.unique(np.concatenate([[0.0, 1.0], X[:, j]]))
        lo, hi = br[:-1], br[1:]
        mid, half = (lo + hi) / 2, (hi - lo) / 2
        nodes.append((mid[:, None] + half[:, None] * g).ravel())
        weights.append(np.repeat(half, 2))
    grids = np.meshgrid(*nodes, indexing="ij")
    w = np.ones_like(grids[0])
    for k, wk in enumerate(weights):
        shape = [1] * len(coords)
        shape[k] = -1
        w = w * wk.reshape(shape)
    b = np.zeros_like(grids[0])
    for i in range(n):
        term = np.ones_like(grids[0])
        for k, j in enumerate(coords):
            term *= (X[i, j] <= grids[k]) - grids[k]
        b += term
    b /= np.sqrt(n)
    return float(np.sum(w * b * b))


ACCEPTANCE_LINES = []


def record_acceptance(label, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: s.split("criterion ", 1)[1]):
            terminalreporter.write_line(line)
