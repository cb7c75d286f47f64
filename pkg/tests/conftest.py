import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stemgnn import tensor as T
from stemgnn.tensor import Tensor

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def grad_of(fn, *arrays):
    """Analytic gradients of scalar ``fn(*tensors)`` w.r.t. each array."""
    ts = [Tensor(a, requires_grad=True) for a in arrays]
    with T.Tape() as tape:
        out = fn(*ts)
    T.backward(tape, out)
    return [tape.grad(t) for t in ts]


def numeric_grad(fn, *arrays, h=1e-5):
    names = [f"a{i}" for i in range(len(arrays))]

    def f(vals):
        return float(fn(*(Tensor(vals[n]) for n in names)).data)

    g = T.finite_difference_gradient(f, dict(zip(names, arrays)), h)
    return [g[n] for n in names]


def rel_err(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / denom


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
