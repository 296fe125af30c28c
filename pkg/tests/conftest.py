import os

import numpy as np
import pytest

os.environ.setdefault("POT_BACKEND_DISABLE_PYTORCH", "1")
os.environ.setdefault("POT_BACKEND_DISABLE_JAX", "1")
os.environ.setdefault("POT_BACKEND_DISABLE_TENSORFLOW", "1")
os.environ.setdefault("POT_BACKEND_DISABLE_CUPY", "1")

from entangle_ot.measures import EmpiricalJoint  # noqa: E402
from entangle_ot.train import Model  # noqa: E402

ACCEPTANCE = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_joint(rng, n, m, d=2, shift=0.0, weights=True):
    x = rng.normal(size=(n, d)) + shift
    y = rng.integers(0, m, n)
    w = rng.dirichlet(np.ones(n)) if weights else None
    return EmpiricalJoint(x, y, w, m)


def random_model(rng, d, m, kind="linear", scale=None):
    model = Model.initialize(kind, d, m, rng, hidden=6)
    model.params = model.params * (rng.uniform(0.5, 4.0) if scale is None else scale)
    return model


def lp_transport(a, b, c):
    """Optimal transport cost by a dense linear program, independent of POT."""
    from scipy.optimize import linprog

    a, b, c = np.asarray(a, float), np.asarray(b, float), np.asarray(c, float)
    n, m = c.shape
    rows = np.kron(np.eye(n), np.ones(m))
    cols = np.kron(np.ones(n), np.eye(m))
    res = linprog(c.ravel(), A_eq=np.vstack([rows, cols]), b_eq=np.concatenate([a, b]),
                  bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun, res.x.reshape(n, m)


def record(key, ok, detail):
    ACCEPTANCE[key] = (bool(ok), detail)
    print(f"{'PASS' if ok else 'FAIL'} criterion {key}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {key:>2}: {detail}")
