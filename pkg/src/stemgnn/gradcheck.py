"""Finite-difference audit of the full training loss on a tiny model."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .model import AblationFlags, ModelConfig, NetworkParams, graph_basis, init_params, network_forward
from .params import rebuild
from .spectral import min_eigengap
from .tensor import Tensor
from .training import loss

TINY = ModelConfig(n_nodes=4, window=8, horizon=1, channels=4, basis=8, attn_dim=4, hidden_dim=4)
MIN_GAP = 1e-3
# sharper attention than the default init, so the learned graph is not near-uniform
ATTN_SCALE = 4.0


@dataclass
class GradcheckReport:
    errors: dict[str, float]   # tensor name -> relative error
    min_gap: float
    attempts: int
    seconds: float
    tolerance: float

    @property
    def worst(self) -> float:
        return max(self.errors.values())

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance

    def lines(self) -> list[str]:
        out = [f"{name:36s} {err:.3e}  {'ok' if err < self.tolerance else 'FAIL'}"
               for name, err in self.errors.items()]
        out.append(f"min eigengap {self.min_gap:.3e}, input draws {self.attempts}, "
                   f"{self.seconds:.1f}s, worst {self.worst:.3e} (tol {self.tolerance:g})")
        return out


def tiny_fixture(seed: int, cfg: ModelConfig = TINY, batch: int = 1,
                 ablation: AblationFlags = AblationFlags(), max_draws: int = 200):
    """Parameters and a window/target pair whose Laplacian gap is >= MIN_GAP."""
    params = init_params(cfg, seed)
    params = rebuild(params, {"attn.w_q": params.attn.w_q.data * ATTN_SCALE,
                              "attn.w_k": params.attn.w_k.data * ATTN_SCALE})
    rng = np.random.default_rng([seed, 1])
    for attempt in range(1, max_draws + 1):
        X = rng.normal(size=(batch, cfg.n_nodes, cfg.window))
        Y = rng.normal(size=(batch, cfg.n_nodes, cfg.horizon))
        if ablation.no_gft:  # identity basis, no eigen-derivative involved
            return params, X, Y, np.inf, attempt
        _, basis = graph_basis(params, Tensor(X), ablation)
        gap = min_eigengap(basis)
        if gap >= MIN_GAP:
            return params, X, Y, gap, attempt
    raise RuntimeError(f"no input with eigengap >= {MIN_GAP} after {max_draws} draws")


def loss_value(params: NetworkParams, X: np.ndarray, Y: np.ndarray,
               ablation: AblationFlags = AblationFlags()) -> Tensor:
    xb = Tensor(X)
    res = network_forward(params, xb, ablation=ablation)
    return loss(res.forecast, Tensor(Y), res.backcast, xb, not ablation.no_backcast)


def analytic_gradients(params: NetworkParams, X, Y, ablation=AblationFlags()) -> dict[str, np.ndarray]:
    with T.Tape() as tape:
        value = loss_value(params, X, Y, ablation)
    T.backward(tape, value)
    return tape.gradients(params.named())


def relative_error(a: np.ndarray, n: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / denom)


def run_gradcheck(seed: int = 7, h: float = 1e-5, tolerance: float = 1e-4,
                  cfg: ModelConfig = TINY, ablation: AblationFlags = AblationFlags(),
                  max_coords: int | None = None) -> GradcheckReport:
    """Compare tape gradients with central differences for every parameter tensor.

    ``max_coords`` limits the entries probed per tensor (evenly spaced); by
    default every entry is probed.
    """
    t0 = time.perf_counter()
    params, X, Y, gap, attempts = tiny_fixture(seed, cfg, ablation=ablation)
    analytic = analytic_gradients(params, X, Y, ablation)
    base = {k: v.data for k, v in params.named().items()}
    coords = None
    if max_coords is not None:
        coords = {k: np.unique(np.linspace(0, v.size - 1, min(v.size, max_coords)).astype(int))
                  for k, v in base.items()}

    def f(values):
        return float(loss_value(rebuild(params, values), X, Y, ablation).data)

    numeric = T.finite_difference_gradient(f, base, h, coords)
    errors = {}
    for name in base:
        idx = slice(None) if coords is None else coords[name]
        a = analytic[name].reshape(-1)[idx]
        n = numeric[name].reshape(-1)[idx]
        errors[name] = relative_error(a, n)
    return GradcheckReport(errors, gap, attempts, time.perf_counter() - t0, tolerance)
