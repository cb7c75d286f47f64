"""Rolling inference, error metrics, naive baselines, ablations and exports."""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import spectral
from .errors import ConfigurationError, DataError
from .model import (VARIANTS, AblationFlags, NetworkParams, graph_basis, lift_channels,
                    spe_seq_cell)
from .tensor import Tensor
from .training import (Dataset, TrainConfig, mean_adjacency, predict, prepare, train,
                       window_arrays)

MAPE_EPS = 1e-8

Forecaster = Callable[[np.ndarray], np.ndarray]


# --------------------------------------------------------------------------
# rolling inference


def model_forecaster(params: NetworkParams, ablation: AblationFlags = AblationFlags(),
                     adjacency: np.ndarray | None = None,
                     basis: spectral.SpectralBasis | None = None) -> Forecaster:
    def f(windows: np.ndarray) -> np.ndarray:
        return predict(params, windows, ablation, adjacency, basis)
    return f


def rolling_forecast(model: NetworkParams | Forecaster, window: np.ndarray, H: int,
                     freeze_graph: bool = False, **kwargs) -> np.ndarray:
    """Predict ``H`` steps by feeding each prediction back into the window.

    ``model`` maps windows ``(B, N, K)`` to forecasts ``(B, N, h)``; a
    :class:`NetworkParams` is wrapped automatically.  ``window`` may be
    ``(N, K)`` or ``(B, N, K)``.  With ``freeze_graph`` the spectral basis of
    the first window is reused for later steps instead of recomputing it.
    """
    if H < 1:
        raise ConfigurationError("horizon must be at least 1")
    x = np.asarray(window, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if isinstance(model, NetworkParams):
        if freeze_graph:
            kwargs = dict(kwargs)
            ablation = kwargs.get("ablation", AblationFlags())
            adj = kwargs.get("adjacency")
            _, basis = graph_basis(model, Tensor(x), ablation,
                                   None if adj is None else Tensor(adj))
            kwargs["basis"] = basis
        model = model_forecaster(model, **kwargs)
    steps = []
    produced = 0
    while produced < H:
        pred = np.asarray(model(x), dtype=np.float64)
        if pred.ndim == 2:
            pred = pred[..., None]
        steps.append(pred)
        produced += pred.shape[-1]
        x = np.concatenate([x, pred], axis=-1)[..., pred.shape[-1]:]
    out = np.concatenate(steps, axis=-1)[..., :H]
    return out[0] if squeeze else out


# --------------------------------------------------------------------------
# metrics


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    t = np.asarray(truth, dtype=np.float64).reshape(-1)
    if p.size == 0 or t.size == 0:
        raise DataError("metrics need non-empty inputs")
    if p.size != t.size:
        raise DataError(f"prediction has {p.size} values, truth has {t.size}")
    return p, t


def metric_mae(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean(np.abs(t - p)))


def metric_rmse(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.sqrt(np.mean((t - p) ** 2)))


def metric_mape(pred, truth, return_skipped: bool = False):
    """Percent error; entries with ``|truth| < 1e-8`` are excluded and counted."""
    p, t = _pair(pred, truth)
    keep = np.abs(t) >= MAPE_EPS
    skipped = int(t.size - keep.sum())
    value = float(np.mean(np.abs((t[keep] - p[keep]) / t[keep])) * 100.0) if keep.any() else float("nan")
    return (value, skipped) if return_skipped else value


# --------------------------------------------------------------------------
# reports


@dataclass
class ForecastReport:
    horizon: int
    per_step: dict[str, list[float]]
    mae: float
    mape: float
    rmse: float
    mape_skipped: int
    predictions: np.ndarray  # (windows, N, H), original scale
    truth: np.ndarray
    window_starts: list[int] = field(default_factory=list)
    fingerprint: str = ""
    seconds: float = 0.0
    label: str = ""
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "label": self.label, "horizon": self.horizon,
            "mae": self.mae, "mape": self.mape, "rmse": self.rmse,
            "per_step": self.per_step, "mape_skipped": self.mape_skipped,
            "windows": int(self.predictions.shape[0]),
            "fingerprint": self.fingerprint, "seconds": self.seconds, **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)

    def predictions_csv(self, node_names: Sequence[str]) -> str:
        lines = ["window_start,step," + ",".join(node_names)]
        starts = self.window_starts or list(range(self.predictions.shape[0]))
        for w, s in enumerate(starts):
            for h in range(self.horizon):
                vals = ",".join(f"{v:.17g}" for v in self.predictions[w, :, h])
                lines.append(f"{s},{h + 1},{vals}")
        return "\n".join(lines) + "\n"


def build_report(pred: np.ndarray, truth: np.ndarray, label: str = "", **kw) -> ForecastReport:
    """Per-step metrics over all windows and nodes, then their mean over H."""
    H = pred.shape[-1]
    per = {"mae": [], "mape": [], "rmse": []}
    skipped = 0
    for h in range(H):
        per["mae"].append(metric_mae(pred[..., h], truth[..., h]))
        m, s = metric_mape(pred[..., h], truth[..., h], return_skipped=True)
        per["mape"].append(m)
        skipped += s
        per["rmse"].append(metric_rmse(pred[..., h], truth[..., h]))
    return ForecastReport(H, per, float(np.mean(per["mae"])), float(np.mean(per["mape"])),
                          float(np.mean(per["rmse"])), skipped, pred, truth, label=label, **kw)


def naive_baselines(windows: np.ndarray, truth: np.ndarray, H: int,
                    starts: Sequence[int] = ()) -> dict[str, ForecastReport]:
    """Repeat-last and rolled moving-average-of-3 on original-scale windows."""
    def last(x):
        return x[..., -1:]

    def ma3(x):
        return x[..., -3:].mean(axis=-1, keepdims=True)

    out = {}
    for name, fn in (("repeat-last", last), ("ma3", ma3)):
        pred = rolling_forecast(fn, windows, H)
        out[name] = build_report(pred, truth, label=name, window_starts=list(starts))
    return out


def config_fingerprint(config: TrainConfig) -> str:
    import hashlib
    blob = json.dumps(dataclasses.asdict(config), sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def split_windows(dataset: Dataset, config: TrainConfig, H: int, split_name: str = "test"):
    """Normalised inputs, original-scale targets and starts for horizon ``H``."""
    data = prepare(dataset, config)
    rng_ = data.splits[("train", "val", "test").index(split_name)]
    inputs, _, starts = window_arrays(data.normalized, rng_, config.window, H)
    if len(starts) == 0:
        raise DataError(f"{split_name} range {rng_} too short for K={config.window}, H={H}")
    _, truth, _ = window_arrays(dataset.values, rng_, config.window, H)
    return data, inputs, truth, starts


def evaluate(params: NetworkParams, dataset: Dataset, config: TrainConfig, H: int,
             adjacency: np.ndarray | None = None, split_name: str = "test",
             freeze_graph: bool = False) -> ForecastReport:
    t0 = time.perf_counter()
    data, inputs, truth, starts = split_windows(dataset, config, H, split_name)
    norm_pred = rolling_forecast(params, inputs, H, freeze_graph=freeze_graph,
                                 ablation=config.ablation, adjacency=adjacency)
    pred = data.stats.invert_nodes_first(norm_pred)
    return build_report(pred, truth, label="StemGNN", window_starts=starts,
                        fingerprint=config_fingerprint(config),
                        seconds=time.perf_counter() - t0)


def evaluate_baselines(dataset: Dataset, config: TrainConfig, H: int,
                       split_name: str = "test") -> dict[str, ForecastReport]:
    data, inputs, truth, starts = split_windows(dataset, config, H, split_name)
    raw = data.stats.invert_nodes_first(inputs)
    return naive_baselines(raw, truth, H, starts)


# --------------------------------------------------------------------------
# ablations


@dataclass
class AblationTable:
    reports: dict[str, list[ForecastReport]]
    data_fingerprints: dict[str, str]

    def mean(self, label: str, metric: str = "mae") -> float:
        return float(np.mean([getattr(r, metric) for r in self.reports[label]]))

    def to_csv(self) -> str:
        lines = ["variant,MAE,RMSE,MAPE,seeds"]
        for label, reps in self.reports.items():
            lines.append(f"{label},{self.mean(label, 'mae'):.6g},{self.mean(label, 'rmse'):.6g},"
                         f"{self.mean(label, 'mape'):.6g},{len(reps)}")
        return "\n".join(lines) + "\n"


def run_ablations(dataset: Dataset, config: TrainConfig, adjacency: np.ndarray | None,
                  seeds: Sequence[int] = (1, 2, 3), H: int = 1,
                  variants: Mapping[str, AblationFlags] = VARIANTS) -> AblationTable:
    """Train and evaluate each variant under the same seeds and data pipeline."""
    if any(flags.no_lc for flags in variants.values()) and adjacency is None:
        raise ConfigurationError("the w/o LC variant needs an adjacency file")
    reports: dict[str, list[ForecastReport]] = {}
    prints = {}
    for label, flags in variants.items():
        cfg = dataclasses.replace(config, ablation=flags)
        prints[label] = prepare(dataset, cfg).fingerprint()
        reports[label] = []
        adj = adjacency if flags.no_lc else None   # the other variants learn their graph
        for seed in seeds:
            seeded = dataclasses.replace(cfg, seed=seed)
            result = train(dataset, seeded, adj)
            rep = evaluate(result.params, dataset, seeded, H, adj)
            rep.label = label
            reports[label].append(rep)
    return AblationTable(reports, prints)


# --------------------------------------------------------------------------
# case-study exports


def export_adjacency(params: NetworkParams, dataset: Dataset, config: TrainConfig) -> np.ndarray:
    """Mean learned adjacency over every training window."""
    data = prepare(dataset, config)
    return mean_adjacency(params, data.train[0])


def adjacency_csv(W: np.ndarray, names: Sequence[str]) -> str:
    lines = ["node," + ",".join(names)]
    for name, row in zip(names, W):
        lines.append(name + "," + ",".join(f"{v:.17g}" for v in row))
    return "\n".join(lines) + "\n"


def export_spectral_components(params: NetworkParams, dataset: Dataset, config: TrainConfig,
                               k: int, adjacency: np.ndarray | None = None,
                               largest: bool = True) -> tuple[list[str], np.ndarray]:
    """GFT series of ``k`` eigen-components and their Spe-Seq-cell outputs.

    The basis comes from the mean training adjacency (or ``adjacency``).
    Returns column names and a ``(T, 2k)`` array: ``gft_1..k`` then ``cell_1..k``.
    The cell output is block 1's cell on the channel-lifted series, averaged
    over channels.
    """
    N = dataset.n_nodes
    if not 1 <= k <= N:
        raise ConfigurationError(f"k must be in [1, {N}], got {k}")
    data = prepare(dataset, config)
    W = adjacency if adjacency is not None else mean_adjacency(params, data.train[0])
    basis = spectral.jacobi_eigh(spectral.normalized_laplacian(Tensor(W)))
    order = np.arange(N)[::-1] if largest else np.arange(N)
    chosen = order[:k]
    series = spectral.gft(basis, Tensor(data.normalized)).data[chosen]  # (k, T)
    lifted = lift_channels(params.lift, Tensor(series[None]))
    cell = spe_seq_cell(params.block1.spe_seq, lifted, use_dft=not config.ablation.no_dft,
                        tied_gate=params.config.tied_gate)
    post = cell.data[0].mean(axis=0)
    names = [f"gft_{i + 1}" for i in range(k)] + [f"cell_{i + 1}" for i in range(k)]
    return names, np.concatenate([series, post], axis=0).T
