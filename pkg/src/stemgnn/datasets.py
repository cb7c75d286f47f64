"""CSV ingestion and synthetic generators.

Dataset CSV: a header of node names, then one row per timestamp with one
column per node.  Adjacency CSV: a header of node names, then N rows of N
weights.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError
from .training import Dataset

SYNTH_KINDS = ("graph-diffusion-sines", "covid-like")


def _parse_rows(path: Path) -> tuple[list[str], np.ndarray]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r]
    if len(rows) < 2:
        raise DataError(f"{path}: need a header and at least one data row")
    header = [h.strip() for h in rows[0]]
    width = len(header)
    values = np.empty((len(rows) - 1, width))
    for i, row in enumerate(rows[1:]):
        line = i + 2
        if len(row) != width:
            raise DataError(f"{path}: row {line} has {len(row)} fields, expected {width}")
        for j, cell in enumerate(row):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {line} column {j + 1}: not a number: {cell!r}") from None
    return header, values


def load_csv(path: str | Path, granularity: str = "") -> Dataset:
    header, values = _parse_rows(Path(path))
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: non-finite values")
    return Dataset(values.T.copy(), header, granularity)


def write_csv(path: str | Path, names: list[str], columns: np.ndarray) -> None:
    """Write ``columns`` (rows x len(names)) with 17 significant digits."""
    lines = [",".join(names)]
    for row in np.atleast_2d(columns):
        lines.append(",".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def save_dataset(path: str | Path, dataset: Dataset) -> None:
    write_csv(path, dataset.node_names, dataset.values.T)


def load_adjacency(path: str | Path, n_nodes: int | None = None) -> np.ndarray:
    header, W = _parse_rows(Path(path))
    if W.shape != (len(header), len(header)):
        raise DataError(f"{path}: adjacency must be square, got {W.shape}")
    if n_nodes is not None and W.shape[0] != n_nodes:
        raise DataError(f"{path}: adjacency has {W.shape[0]} nodes, dataset has {n_nodes}")
    if np.any(W < 0):
        raise DataError(f"{path}: adjacency has negative weights")
    return W


# --------------------------------------------------------------------------
# generators


def random_connected_graph(n: int, rng: np.random.Generator, extra_edges: float = 0.3) -> np.ndarray:
    """Random spanning tree plus extra edges; symmetric, zero diagonal."""
    W = np.zeros((n, n))
    order = rng.permutation(n)
    for i in range(1, n):
        j = order[rng.integers(0, i)]
        w = rng.uniform(0.5, 1.5)
        W[order[i], j] = W[j, order[i]] = w
    for i in range(n):
        for j in range(i + 1, n):
            if W[i, j] == 0 and rng.random() < extra_edges:
                W[i, j] = W[j, i] = rng.uniform(0.5, 1.5)
    return W


def graph_diffusion_sines(n: int, length: int, seed: int, periods=(24, 10),
                          noise: float = 0.05, diffusion: float = 0.5
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Shared sinusoids with node phases, diffused one hop over a random graph.

    Returns (values N x T, adjacency N x N).  ``noise`` is the Gaussian noise
    standard deviation as a fraction of each node's signal amplitude.
    """
    rng = np.random.default_rng(seed)
    W = random_connected_graph(n, rng)
    t = np.arange(length)
    mix = rng.uniform(0.5, 1.5, size=(n, len(periods)))
    phase = rng.uniform(0, 2 * np.pi, size=(n, 1))
    base = sum(mix[:, [m]] * np.sin(2 * np.pi * t / p + phase)
               for m, p in enumerate(periods))
    deg = W.sum(axis=1, keepdims=True)
    signal = (1 - diffusion) * base + diffusion * (W @ base) / deg
    amp = np.abs(signal).max(axis=1, keepdims=True)
    values = signal + noise * amp * rng.standard_normal(signal.shape)
    return values, W


def covid_like(n: int, length: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Daily-count-shaped series: recurring regional waves times a weekly cycle.

    Wave periods (40-70 days) are short enough that a 60-day training range
    spans the levels seen later.  Returns (counts N x T, region graph N x N).
    """
    rng = np.random.default_rng(seed)
    n_regions = max(2, n // 6)
    region = rng.integers(0, n_regions, size=n)
    W = np.where(region[:, None] == region[None, :], 1.0, 0.1)
    np.fill_diagonal(W, 0.0)
    t = np.arange(length)
    period = rng.uniform(40, 70, size=n_regions)[region][:, None]
    phase = rng.uniform(0, 2 * np.pi, size=n_regions)[region][:, None]
    lag = rng.uniform(-0.3, 0.3, size=(n, 1))
    wave = 1.0 + 0.5 * np.sin(2 * np.pi * t[None, :] / period + phase + lag)
    level = rng.uniform(200, 2000, size=(n, 1))
    weekday = 1.0 + 0.3 * np.cos(2 * np.pi * (t[None, :] + rng.integers(0, 7, size=(n, 1))) / 7)
    counts = rng.poisson(level * wave * weekday).astype(np.float64)
    return counts, W


def synth(kind: str, n: int, length: int, seed: int, **kwargs) -> tuple[Dataset, np.ndarray]:
    if kind == "graph-diffusion-sines":
        if n < 2 or length < 100:
            raise ConfigurationError("graph-diffusion-sines needs N >= 2 and T >= 100")
        values, W = graph_diffusion_sines(n, length, seed, **kwargs)
        granularity = "step"
    elif kind == "covid-like":
        values, W = covid_like(n, length, seed)
        granularity = "1day"
    else:
        raise ConfigurationError(f"unknown synthetic kind {kind!r}; choose from {SYNTH_KINDS}")
    names = [f"node{i}" for i in range(n)]
    return Dataset(values, names, granularity), W


def write_synth(kind: str, n: int, length: int, seed: int, out: str | Path,
                **kwargs) -> tuple[Path, Path]:
    """Write the series CSV to ``out`` and the true graph next to it."""
    dataset, W = synth(kind, n, length, seed, **kwargs)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    adj = out.with_name(out.stem + "_adjacency.csv")
    save_dataset(out, dataset)
    write_csv(adj, dataset.node_names, W)
    return out, adj
