"""Data preparation, the joint forecast/backcast loss, RMSprop and the epoch loop."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DataError, NumericError
from .correlation import latent_correlation
from .model import AblationFlags, ModelConfig, NetworkParams, init_params, network_forward
from .params import rebuild
from .spectral import SpectralBasis, jacobi_eigh, normalized_laplacian
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    values: np.ndarray  # (N, T)
    node_names: list[str]
    granularity: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"dataset values must be N x T, got {self.values.shape}")
        if len(self.node_names) != self.values.shape[0]:
            raise DataError("node name count does not match the number of series")

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]


# --------------------------------------------------------------------------
# normalisation


@dataclass
class NormStats:
    kind: str
    a: np.ndarray  # mean (zscore) or min (minmax)
    b: np.ndarray  # population std (zscore) or max (minmax)

    def apply(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if self.kind == "none":
            return values.copy()
        shape = (-1,) + (1,) * (values.ndim - 1) if values.ndim > 1 else (-1,)
        a, b = self.a.reshape(shape), self.b.reshape(shape)
        if self.kind == "zscore":
            return (values - a) / b
        return (values - a) / (b - a)

    def invert(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if self.kind == "none":
            return values.copy()
        shape = (-1,) + (1,) * (values.ndim - 1) if values.ndim > 1 else (-1,)
        a, b = self.a.reshape(shape), self.b.reshape(shape)
        if self.kind == "zscore":
            return values * b + a
        return values * (b - a) + a

    def apply_nodes_first(self, values: np.ndarray) -> np.ndarray:
        """Normalise an array whose node axis is second to last, e.g. (B, N, K)."""
        return np.moveaxis(self.apply(np.moveaxis(values, -2, 0)), 0, -2)

    def invert_nodes_first(self, values: np.ndarray) -> np.ndarray:
        return np.moveaxis(self.invert(np.moveaxis(values, -2, 0)), 0, -2)


def fit_normalizer(kind: str, train_values: np.ndarray) -> NormStats:
    x = np.asarray(train_values, dtype=np.float64)
    n = x.shape[0]
    if kind == "none":
        return NormStats("none", np.zeros(n), np.ones(n))
    if kind == "zscore":
        mu = x.mean(axis=1)
        sigma = x.std(axis=1)  # population (divisor T)
        if np.any(sigma <= 0):
            bad = int(np.argmax(sigma <= 0))
            raise DataError(f"series {bad} is constant on the training range")
        return NormStats("zscore", mu, sigma)
    if kind == "minmax":
        lo, hi = x.min(axis=1), x.max(axis=1)
        if np.any(hi <= lo):
            bad = int(np.argmax(hi <= lo))
            raise DataError(f"series {bad} has max == min on the training range")
        return NormStats("minmax", lo, hi)
    raise ConfigurationError(f"unknown normalisation {kind!r}")


def normalize_fit_apply(kind: str, train_values: np.ndarray) -> tuple[NormStats, np.ndarray]:
    stats = fit_normalizer(kind, train_values)
    return stats, stats.apply(train_values)


# --------------------------------------------------------------------------
# windows and splits


def make_windows(length: int, K: int, h: int, start: int = 0) -> list[tuple[range, range]]:
    """Stride-1 (input, target) index ranges inside ``[start, start + length)``."""
    if length < K + h:
        raise DataError(f"need at least K + h = {K + h} timestamps, got {length}")
    return [(range(t - K, t), range(t, t + h))
            for t in range(start + K, start + length - h + 1)]


def split(length: int, ratios: Sequence[float]) -> list[tuple[int, int]]:
    """Chronological ``[start, stop)`` ranges at floor(T * cumulative ratio)."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0):
        raise ConfigurationError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    edges = [0]
    acc = 0.0
    for r in ratios[:-1]:
        acc += r
        edges.append(int(math.floor(length * acc + 1e-9)))
    edges.append(length)
    return [(edges[i], edges[i + 1]) for i in range(3)]


def window_arrays(values: np.ndarray, rng_: tuple[int, int], K: int, h: int
                  ) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Inputs (B, N, K), targets (B, N, h) and target start indices for a split."""
    lo, hi = rng_
    if hi - lo < K + h:
        n = values.shape[0]
        return np.zeros((0, n, K)), np.zeros((0, n, h)), []
    starts = [w[1].start for w in make_windows(hi - lo, K, h, lo)]
    idx = np.asarray(starts)
    inputs = np.stack([values[:, t - K:t] for t in idx])
    targets = np.stack([values[:, t:t + h] for t in idx])
    return inputs, targets, starts


# --------------------------------------------------------------------------
# loss and optimiser


def loss(forecast: Tensor, target: Tensor, backcast: Tensor | None = None,
         window_input: Tensor | None = None, use_backcast: bool = True) -> Tensor:
    """Squared forecast error plus squared backcast error, averaged over the batch.

    Unbatched arguments are treated as a batch of one.
    """
    batch = forecast.shape[0] if forecast.ndim == 3 else 1
    total = T.sum_all(T.square(T.sub(forecast, target)))
    if use_backcast:
        total = T.add(total, T.sum_all(T.square(T.sub(backcast, window_input))))
    return T.scale(total, 1.0 / batch)


def rmsprop_step(state: dict[str, np.ndarray], params: dict[str, np.ndarray],
                 grads: dict[str, np.ndarray], lr: float, rho: float = 0.9,
                 eps: float = 1e-8) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    new_params, new_state = {}, {}
    for name, p in params.items():
        g = grads[name]
        v = state.get(name)
        v = rho * (np.zeros_like(p) if v is None else v) + (1.0 - rho) * g * g
        new_state[name] = v
        new_params[name] = p - lr * g / (np.sqrt(v) + eps)
    return new_params, new_state


def lr_at_epoch(lr0: float, epoch: int, decay: float = 0.7, every: int = 5) -> float:
    return lr0 * decay ** (epoch // every)


# --------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    window: int = 12
    horizon: int = 1
    epochs: int = 50
    batch_size: int = 50
    lr: float = 1e-3
    lr_decay: float = 0.7
    decay_every: int = 5
    rho: float = 0.9
    eps: float = 1e-8
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1)
    seed: int = 0
    channels: int = 64
    basis: int = 16
    attn_dim: int = 32
    hidden_dim: int = 32
    kernel_size: int = 3
    norm: str = "zscore"
    tied_gate: bool = False
    freeze_graph: bool = False
    ablation: AblationFlags = field(default_factory=AblationFlags)

    def __post_init__(self):
        self.ratios = tuple(float(r) for r in self.ratios)
        for name in ("window", "horizon", "epochs", "batch_size", "decay_every",
                     "channels", "basis", "attn_dim", "hidden_dim", "kernel_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.lr < 0 or not 0 < self.lr_decay <= 1 or not 0 <= self.rho < 1 or self.eps <= 0:
            raise ConfigurationError("invalid optimiser settings")

    def model_config(self, n_nodes: int) -> ModelConfig:
        return ModelConfig(n_nodes=n_nodes, window=self.window, horizon=self.horizon,
                           channels=self.channels, basis=self.basis, attn_dim=self.attn_dim,
                           hidden_dim=self.hidden_dim, kernel_size=self.kernel_size,
                           tied_gate=self.tied_gate)


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    val_mae: float
    seconds: float

    CSV_HEADER = "epoch,lr,train_loss,val_mae,seconds"

    def csv_row(self) -> str:
        return f"{self.epoch},{self.lr!r},{self.train_loss!r},{self.val_mae!r},{self.seconds:.3f}"


@dataclass
class TrainState:
    """Everything needed to continue training bit-identically."""

    params: NetworkParams
    opt_state: dict[str, np.ndarray]
    next_epoch: int
    best_params: NetworkParams
    best_score: float
    best_epoch: int
    log: list[EpochLog] = field(default_factory=list)


@dataclass
class TrainResult:
    params: NetworkParams        # best-validation parameters
    final_params: NetworkParams
    log: list[EpochLog]
    best_epoch: int
    stats: NormStats
    splits: list[tuple[int, int]]
    state: TrainState


@dataclass
class PreparedData:
    normalized: np.ndarray
    stats: NormStats
    splits: list[tuple[int, int]]
    train: tuple[np.ndarray, np.ndarray, list[int]]
    val: tuple[np.ndarray, np.ndarray, list[int]]
    test: tuple[np.ndarray, np.ndarray, list[int]]

    def fingerprint(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for part in (self.train, self.val, self.test):
            h.update(np.ascontiguousarray(part[0]).tobytes())
            h.update(np.ascontiguousarray(part[1]).tobytes())
        return h.hexdigest()[:16]


def prepare(dataset: Dataset, config: TrainConfig) -> PreparedData:
    K, h = config.window, config.horizon
    splits = split(dataset.length, config.ratios)
    for (lo, hi), r, name in zip(splits, config.ratios, ("train", "val", "test")):
        if r > 0 and hi - lo < K + h:
            raise DataError(f"{name} range [{lo}, {hi}) is shorter than K + h = {K + h}")
    lo, hi = splits[0]
    stats = fit_normalizer(config.norm, dataset.values[:, lo:hi])
    norm = stats.apply(dataset.values)
    return PreparedData(norm, stats, splits,
                        *(window_arrays(norm, s, K, h) for s in splits))


def _graph(adjacency: np.ndarray | None) -> Tensor | None:
    return None if adjacency is None else Tensor(adjacency)


def predict(params: NetworkParams, inputs: np.ndarray, ablation: AblationFlags = AblationFlags(),
            adjacency: np.ndarray | None = None, basis: SpectralBasis | None = None,
            chunk: int = 256) -> np.ndarray:
    """Untaped batched forecasts ``(B, N, h_out)`` for normalised windows."""
    outs = []
    for i in range(0, len(inputs), chunk):
        res = network_forward(params, Tensor(inputs[i:i + chunk]), _graph(adjacency),
                              ablation, basis)
        outs.append(res.forecast.data)
    n, h = params.config.n_nodes, params.config.horizon
    return np.concatenate(outs) if outs else np.zeros((0, n, h))


def mean_adjacency(params: NetworkParams, inputs: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Average learned adjacency over a set of normalised windows."""
    n = params.config.n_nodes
    total = np.zeros((n, n))
    for i in range(0, len(inputs), chunk):
        W = latent_correlation(params.gru, params.attn, Tensor(inputs[i:i + chunk]))
        total += W.data.sum(axis=0)
    return total / max(len(inputs), 1)


def frozen_basis(params: NetworkParams, inputs: np.ndarray, ablation: AblationFlags,
                 adjacency: np.ndarray | None) -> SpectralBasis:
    """One basis from the training-window mean adjacency, outside the tape."""
    if ablation.no_gft:
        return SpectralBasis.identity(params.config.n_nodes)
    W = adjacency if adjacency is not None else mean_adjacency(params, inputs)
    return jacobi_eigh(normalized_laplacian(Tensor(W)))


def _score_val(params, data: PreparedData, config: TrainConfig, adjacency, basis) -> float:
    inputs, targets, _ = data.val
    if len(inputs) == 0:
        return math.nan
    pred = predict(params, inputs, config.ablation, adjacency, basis)
    err = data.stats.invert_nodes_first(pred) - data.stats.invert_nodes_first(targets)
    return float(np.mean(np.abs(err)))


def train(dataset: Dataset, config: TrainConfig, adjacency: np.ndarray | None = None,
          resume: TrainState | None = None, until: int | None = None) -> TrainResult:
    """Seeded RMSprop training; returns best-validation and final parameters.

    ``until`` stops after that many epochs in total (for checkpoint/resume);
    selection falls back to training loss when the validation split is empty.
    """
    data = prepare(dataset, config)
    ablation = config.ablation
    if ablation.no_lc and adjacency is None:
        raise ConfigurationError("the w/o LC variant needs a predefined adjacency")
    graph = _graph(adjacency)
    inputs, targets, _ = data.train
    if len(inputs) == 0:
        raise DataError("no training windows")
    if resume is None:
        params = init_params(config.model_config(dataset.n_nodes), config.seed)
        state = TrainState(params, {}, 0, params, math.inf, -1, [])
    else:
        state = dataclasses.replace(resume, log=list(resume.log), opt_state=dict(resume.opt_state))
    params = state.params
    stop = config.epochs if until is None else min(until, config.epochs)
    names = list(params.named())
    use_bc = not ablation.no_backcast

    for epoch in range(state.next_epoch, stop):
        t0 = time.perf_counter()
        lr = lr_at_epoch(config.lr, epoch, config.lr_decay, config.decay_every)
        order = np.random.default_rng([config.seed, epoch]).permutation(len(inputs))
        basis = frozen_basis(params, inputs, ablation, adjacency) if config.freeze_graph else None
        total, count = 0.0, 0
        for b, i in enumerate(range(0, len(order), config.batch_size)):
            idx = order[i:i + config.batch_size]
            xb, yb = Tensor(inputs[idx]), Tensor(targets[idx])
            # overflow is reported by the divergence guard below, not as warnings
            with T.Tape() as tape, np.errstate(over="ignore", invalid="ignore"):
                res = network_forward(params, xb, graph, ablation, basis)
                batch_loss = loss(res.forecast, yb, res.backcast, xb, use_bc)
            value = float(batch_loss.data)
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
            T.backward(tape, batch_loss)
            named = params.named()
            grads = tape.gradients(named)
            current = {k: named[k].data for k in names}
            new, state.opt_state = rmsprop_step(state.opt_state, current, grads, lr,
                                                config.rho, config.eps)
            params = rebuild(params, new)
            total += value * len(idx)
            count += len(idx)
        train_loss = total / count
        val_mae = _score_val(params, data, config, adjacency, basis)
        score = train_loss if math.isnan(val_mae) else val_mae
        if score < state.best_score:
            state.best_score, state.best_epoch, state.best_params = score, epoch, params
        entry = EpochLog(epoch, lr, train_loss, val_mae, time.perf_counter() - t0)
        state.log.append(entry)
        log.info("epoch %d lr %.2e loss %.5f val_mae %.5f", epoch, lr, train_loss, val_mae)
        state.params = params
        state.next_epoch = epoch + 1
    best = state.best_params if state.best_epoch >= 0 else params
    return TrainResult(best, params, state.log, state.best_epoch, data.stats, data.splits, state)


def log_csv(entries: Sequence[EpochLog]) -> str:
    return "\n".join([EpochLog.CSV_HEADER] + [e.csv_row() for e in entries]) + "\n"
