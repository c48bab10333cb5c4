"""Datasets: CSV ingestion, synthetic bandlimited series, noise and missing values."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .graph import (
    Graph,
    GraphError,
    build_knn_graph,
    build_rbf_adjacency,
    graph_spectrum,
    load_adjacency_csv,
    load_node_meta_csv,
    random_geometric_graph,
    save_adjacency_csv,
)


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True, eq=False)
class TimeSeriesDataset:
    """N x T signals on a graph (column t is the snapshot at time t).

    ``missing`` marks observations that were absent (their entries in
    ``signals`` are NaN until filled). ``truth`` holds clean ground truth when
    the observed view has been corrupted; it defaults to ``signals``.
    """

    signals: np.ndarray
    graph: Graph
    units: str = ""
    missing: Optional[np.ndarray] = None
    truth: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.array(self.signals, dtype=np.float64, copy=True)
        if x.ndim != 2:
            raise DataError("signals must be an N x T matrix")
        if x.shape[0] != self.graph.n_nodes:
            raise DataError(f"signals have {x.shape[0]} nodes, graph has {self.graph.n_nodes}")
        bad = ~np.isfinite(x)
        if self.missing is not None:
            miss = np.array(self.missing, dtype=bool, copy=True)
            if miss.shape != x.shape:
                raise DataError("missing mask shape does not match signals")
            if np.any(bad & ~miss):
                raise DataError("non-finite values outside the missing mask")
            miss.setflags(write=False)
            object.__setattr__(self, "missing", miss)
        elif np.any(bad):
            raise DataError("signals contain non-finite values; load them with a missing mask")
        x.setflags(write=False)
        object.__setattr__(self, "signals", x)
        if self.truth is not None:
            t = np.array(self.truth, dtype=np.float64, copy=True)
            if t.shape != x.shape:
                raise DataError("truth shape does not match signals")
            t.setflags(write=False)
            object.__setattr__(self, "truth", t)

    @property
    def n_nodes(self) -> int:
        return self.signals.shape[0]

    @property
    def n_steps(self) -> int:
        return self.signals.shape[1]

    @property
    def ground_truth(self) -> np.ndarray:
        return self.signals if self.truth is None else self.truth

    @property
    def is_complete(self) -> bool:
        return bool(np.all(np.isfinite(self.signals)))


# --- CSV I/O ---------------------------------------------------------------------

def _parse_float(cell: str) -> float:
    c = cell.strip()
    if c.lower() in ("nan", ""):
        return math.nan
    return float(c)


def read_signals_csv(path) -> np.ndarray:
    """T rows x N columns; an optional header row; ``NaN`` or empty cells are missing.

    Returns the N x T matrix.
    """
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                values = [_parse_float(c) for c in row]
            except ValueError:
                if lineno == 1 and not rows:
                    continue  # header
                raise DataError(f"{path}:{lineno}: unparseable value in signals row") from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise DataError(f"{path}:{lineno}: expected {width} columns, got {len(values)}")
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.array(rows).T


def write_signals_csv(signals: np.ndarray, path, header: Optional[Sequence[str]] = None) -> None:
    x = np.asarray(signals)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header is not None:
            w.writerow(list(header))
        for row in x.T:
            w.writerow(["NaN" if not np.isfinite(v) else repr(float(v)) for v in row])


def write_mask_csv(mask: np.ndarray, path) -> None:
    """Absent entries as ``t,node`` pairs."""
    nodes, times = np.nonzero(np.asarray(mask, dtype=bool))
    order = np.lexsort((nodes, times))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "node"])
        for i in order:
            w.writerow([int(times[i]), int(nodes[i])])


def read_mask_csv(path, shape) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            try:
                t, n = int(row["t"]), int(row["node"])
            except (KeyError, TypeError, ValueError):
                raise DataError(f"{path}:{lineno}: malformed mask row") from None
            if not (0 <= n < shape[0] and 0 <= t < shape[1]):
                raise DataError(f"{path}:{lineno}: mask entry out of range")
            mask[n, t] = True
    return mask


def load_dataset(signals_csv, adjacency_csv=None, meta_csv=None, graph_builder: str = "raw",
                 k: int = 10, rbf_window: int = 1000, units: str = "") -> TimeSeriesDataset:
    """Read signals plus a graph description.

    ``graph_builder`` is ``raw`` (weighted adjacency CSV), ``knn`` (station
    metadata CSV, geodesic k-NN weights) or ``rbf`` (binary adjacency CSV
    reweighted from the first ``rbf_window`` steps of the signals).
    """
    x = read_signals_csv(signals_csv)
    missing = ~np.isfinite(x)
    if graph_builder == "knn":
        if meta_csv is None:
            raise DataError("knn graph builder needs a node metadata CSV")
        meta = load_node_meta_csv(meta_csv)
        if len(meta) != x.shape[0]:
            raise DataError(f"signals have {x.shape[0]} columns, metadata has {len(meta)} rows")
        graph = build_knn_graph(meta, k)
    else:
        if adjacency_csv is None:
            raise DataError(f"{graph_builder} graph builder needs an adjacency CSV")
        a = load_adjacency_csv(adjacency_csv)
        if a.shape != (x.shape[0], x.shape[0]):
            raise DataError(f"adjacency is {a.shape[0]}x{a.shape[1]}, signals have {x.shape[0]} columns")
        if graph_builder == "raw":
            graph = Graph(a)
        elif graph_builder == "rbf":
            head = x[:, :rbf_window]
            if np.any(~np.isfinite(head)):
                raise DataError("rbf weights need a complete first window")
            graph = build_rbf_adjacency(a, x, rbf_window)
        else:
            raise DataError(f"unknown graph builder {graph_builder!r}")
    return TimeSeriesDataset(x, graph, units, missing if missing.any() else None)


def save_dataset(dataset: TimeSeriesDataset, directory) -> dict:
    """Write ``signals.csv``, ``adjacency.csv`` and, if present, ``truth.csv``/``mask.csv``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {"signals": d / "signals.csv", "adjacency": d / "adjacency.csv"}
    write_signals_csv(dataset.signals, paths["signals"])
    save_adjacency_csv(dataset.graph, paths["adjacency"])
    if dataset.truth is not None:
        paths["truth"] = d / "truth.csv"
        write_signals_csv(dataset.truth, paths["truth"])
    if dataset.missing is not None:
        paths["mask"] = d / "mask.csv"
        write_mask_csv(dataset.missing, paths["mask"])
    return {k: str(v) for k, v in paths.items()}


# --- synthetic data --------------------------------------------------------------

@dataclass(frozen=True)
class ARModel:
    """Order-1 autoregression for the in-band GFT coefficients.

    ``level`` is a constant added to the signal through the constant
    eigenvector (only allowed when frequency index 0 is in band).
    """

    coef: float = 0.9
    innovation_std: float = 1.0
    level: float = 0.0


def generate_synthetic(n: int, t: int, freq_indices: Sequence[int],
                       temporal_model: ARModel = ARModel(), snr_db: float = math.inf,
                       seed: int = 0, graph: Optional[Graph] = None,
                       amplitudes: Optional[Sequence[float]] = None) -> TimeSeriesDataset:
    """Snapshots ``U[:, F] a^t + eta^t`` with AR(1) coefficients ``a^t``.

    ``eta^t`` lives on the complementary frequencies; its scale makes the
    ratio of in-band to off-band energy equal ``10^(snr_db / 10)`` in
    expectation. ``amplitudes`` rescales each in-band coefficient.
    """
    coefs = np.broadcast_to(np.asarray(temporal_model.coef, dtype=float), (len(freq_indices),))
    if np.any(np.abs(coefs) >= 1):
        raise DataError("temporal model is unstable: |coef| must be < 1")
    if graph is None:
        graph = random_geometric_graph(n, seed=seed)
    if graph.n_nodes != n:
        raise DataError(f"graph has {graph.n_nodes} nodes, expected {n}")
    f = [int(i) for i in freq_indices]
    if temporal_model.level and 0 not in f:
        raise DataError("a nonzero level needs frequency index 0 in band")
    spec = graph_spectrum(graph)
    u = spec.eigenvectors
    rng = np.random.default_rng(seed)
    k = len(f)
    amp = np.ones(k) if amplitudes is None else np.asarray(amplitudes, dtype=float)
    a = np.empty((k, t))
    stationary = temporal_model.innovation_std / np.sqrt(1 - coefs ** 2)
    a[:, 0] = rng.normal(size=k) * stationary
    for step in range(1, t):
        a[:, step] = coefs * a[:, step - 1] + temporal_model.innovation_std * rng.normal(size=k)
    a *= amp[:, None]
    if temporal_model.level:
        a[f.index(0)] += temporal_model.level * np.sqrt(n) * np.sign(u[:, 0].sum())
    xb = u[:, f] @ a
    if math.isinf(snr_db) or k == n:
        return TimeSeriesDataset(xb, graph)
    off = [i for i in range(n) if i not in set(f)]
    band_energy = np.mean(np.sum(xb ** 2, axis=0))
    ratio = 10.0 ** (snr_db / 10.0)
    sigma = np.sqrt(band_energy / (ratio * len(off)))
    eta = u[:, off] @ (sigma * rng.normal(size=(len(off), t)))
    return TimeSeriesDataset(xb + eta, graph)


# --- corruption ------------------------------------------------------------------

@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    noise_ratio: float = 0.0
    missing_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("noise", "missing"):
            raise ValueError(f"unknown corruption kind {self.kind!r}")
        if self.noise_ratio < 0:
            raise ValueError("noise_ratio must be nonnegative")
        if not 0 <= self.missing_fraction < 1:
            raise ValueError("missing_fraction must lie in [0, 1)")


def inject_noise(dataset: TimeSeriesDataset, spec: CorruptionSpec) -> TimeSeriesDataset:
    """Add i.i.d. Gaussian noise with std ``noise_ratio`` times the dataset std."""
    if spec.kind != "noise":
        raise ValueError("inject_noise needs a noise spec")
    clean = dataset.ground_truth
    sigma_x = float(np.std(clean))
    rng = np.random.default_rng(spec.seed)
    noisy = clean + spec.noise_ratio * sigma_x * rng.normal(size=clean.shape)
    return replace(dataset, signals=noisy, truth=clean, missing=None)


def inject_missing(dataset: TimeSeriesDataset, spec: CorruptionSpec) -> TimeSeriesDataset:
    """Mark ``round(fraction * N)`` random nodes absent at every timestep.

    Absent observations become NaN; clean values stay in ``truth``.
    """
    if spec.kind != "missing":
        raise ValueError("inject_missing needs a missing-value spec")
    n, t = dataset.signals.shape
    count = int(round(spec.missing_fraction * n))
    if count >= n:
        raise DataError("missing fraction leaves no observed node at some timestep")
    rng = np.random.default_rng(spec.seed)
    mask = np.zeros((n, t), dtype=bool)
    for step in range(t):
        mask[rng.choice(n, size=count, replace=False), step] = True
    clean = dataset.ground_truth
    observed = np.where(mask, np.nan, clean)
    return replace(dataset, signals=observed, truth=clean, missing=mask)


def one_hop_fill(snapshot, mask, graph: Graph, previous=None, dataset_mean: Optional[float] = None):
    """Replace absent entries by the plain average of their present neighbours.

    Nodes whose neighbours are all absent take ``previous`` (the prior
    snapshot) at that node, or ``dataset_mean`` when there is no prior
    snapshot. Present entries are returned unchanged.
    """
    x = np.array(snapshot, dtype=np.float64, copy=True)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return x
    present = ~mask
    adj = graph.adjacency > 0
    counts = adj[:, present].sum(axis=1)
    sums = adj[:, present].astype(float) @ x[present]
    for node in np.flatnonzero(mask):
        if counts[node] > 0:
            x[node] = sums[node] / counts[node]
        elif previous is not None:
            x[node] = previous[node]
        elif dataset_mean is not None:
            x[node] = dataset_mean
        else:
            x[node] = float(np.mean(x[present]))
    return x


def fill_missing(dataset: TimeSeriesDataset) -> TimeSeriesDataset:
    """Apply :func:`one_hop_fill` to every snapshot in time order."""
    if dataset.missing is None or not dataset.missing.any():
        return dataset
    x = dataset.signals
    mean = float(np.nanmean(x))
    out = np.empty_like(x)
    prev = None
    for step in range(x.shape[1]):
        out[:, step] = one_hop_fill(x[:, step], dataset.missing[:, step], dataset.graph, prev, mean)
        prev = out[:, step]
    return replace(dataset, signals=out)


__all__ = [
    "TimeSeriesDataset", "DataError", "ARModel", "CorruptionSpec", "GraphError",
    "read_signals_csv", "write_signals_csv", "write_mask_csv", "read_mask_csv",
    "load_dataset", "save_dataset", "generate_synthetic", "inject_noise", "inject_missing",
    "one_hop_fill", "fill_missing",
]
