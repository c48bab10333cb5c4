"""Graphs, Laplacians, the symmetric eigensolver and the graph Fourier transform."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _kernels

EARTH_RADIUS_KM = 6371.0
# Distances enter the exponential in units of 100 km, altitude differences in km.
DISTANCE_SCALE_KM = 100.0
ALTITUDE_SCALE_M = 1000.0

JACOBI_REL_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


class GraphError(ValueError):
    """Raised when a graph violates its structural invariants."""


class EigenError(RuntimeError):
    """Raised when the eigensolver rejects its input or fails to converge."""


@dataclass(frozen=True)
class NodeMeta:
    id: str
    lat: float
    lon: float
    alt: float = 0.0


def _connected(adjacency: np.ndarray) -> bool:
    n = adjacency.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    stack = [0]
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(adjacency[i] > 0):
            if not seen[j]:
                seen[j] = True
                stack.append(j)
    return bool(seen.all())


@dataclass(frozen=True, eq=False)
class Graph:
    """Weighted undirected connected graph.

    The adjacency matrix is copied and made read-only on construction.
    Symmetry, nonnegativity, a zero diagonal and connectivity are enforced.
    """

    adjacency: np.ndarray
    node_meta: Optional[tuple] = None

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=np.float64, copy=True)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise GraphError(f"adjacency must be a non-empty square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise GraphError("adjacency has non-finite entries")
        if not np.array_equal(a, a.T):
            raise GraphError("adjacency is not symmetric")
        if np.any(a < 0):
            raise GraphError("adjacency has negative weights")
        if np.any(np.diag(a) != 0):
            raise GraphError("adjacency diagonal must be zero")
        if not _connected(a):
            raise GraphError("graph is not connected")
        if self.node_meta is not None:
            meta = tuple(self.node_meta)
            if len(meta) != a.shape[0]:
                raise GraphError(f"{len(meta)} node records for {a.shape[0]} nodes")
            object.__setattr__(self, "node_meta", meta)
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def degree(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def neighbors(self, n: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[n] > 0)

    @property
    def laplacian(self) -> np.ndarray:
        return build_laplacian(self)


def build_laplacian(graph: Graph) -> np.ndarray:
    """Combinatorial Laplacian ``D - A``."""
    a = graph.adjacency
    return np.diag(a.sum(axis=1)) - a


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Ascending Laplacian eigenvalues with aligned orthonormal eigenvectors (columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    laplacian: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("eigenvalues", "eigenvectors", "laplacian"):
            value = getattr(self, name)
            if value is None:
                continue
            value = np.array(value, dtype=np.float64, copy=True)
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_nodes(self) -> int:
        return self.eigenvalues.shape[0]

    def basis(self, freq_indices: Sequence[int]) -> np.ndarray:
        """Columns of U restricted to ``freq_indices``."""
        return self.eigenvectors[:, list(freq_indices)]


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    # First entry of largest magnitude made nonnegative.
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.where(vectors[idx, np.arange(vectors.shape[1])] < 0, -1.0, 1.0)
    return vectors * signs


def eigh(matrix: np.ndarray, *, rel_tol: float = JACOBI_REL_TOL,
         max_sweeps: int = JACOBI_MAX_SWEEPS) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns ascending eigenvalues and the matching eigenvectors with the sign
    convention applied. Raises :class:`EigenError` on asymmetric input or when
    the off-diagonal norm does not drop below ``rel_tol * ||matrix||_F``.
    """
    a = np.ascontiguousarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise EigenError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise EigenError("matrix has non-finite entries")
    if a.size and np.max(np.abs(a - a.T)) > 1e-12:
        raise EigenError("matrix is not symmetric within 1e-12")
    a = 0.5 * (a + a.T)
    if a.shape[0] == 0:
        return np.zeros(0), np.zeros((0, 0))
    tol = rel_tol * np.linalg.norm(a)
    diag, vecs, sweeps, converged = _kernels.jacobi_sweeps(a, tol, max_sweeps)
    if not converged:
        raise EigenError(f"Jacobi iteration did not converge in {sweeps} sweeps")
    order = np.argsort(diag, kind="stable")
    return diag[order], _fix_signs(vecs[:, order])


def eigendecompose(laplacian: np.ndarray) -> Spectrum:
    values, vectors = eigh(laplacian)
    return Spectrum(values, vectors, np.asarray(laplacian, dtype=np.float64))


def graph_spectrum(graph: Graph) -> Spectrum:
    return eigendecompose(build_laplacian(graph))


def _check_dim(signal, n):
    signal = np.asarray(signal, dtype=np.float64)
    if signal.shape[0] != n:
        raise ValueError(f"signal has {signal.shape[0]} entries, spectrum has {n} nodes")
    return signal


def gft(signal, spectrum: Spectrum) -> np.ndarray:
    """Graph Fourier transform ``U^T x``. Accepts a vector or an (N, T) matrix."""
    return spectrum.eigenvectors.T @ _check_dim(signal, spectrum.n_nodes)


def igft(coefficients, spectrum: Spectrum) -> np.ndarray:
    return spectrum.eigenvectors @ _check_dim(coefficients, spectrum.n_nodes)


# --- graph construction ------------------------------------------------------

def haversine_km(lat1, lon1, lat2, lon2) -> np.ndarray:
    lat1, lon1, lat2, lon2 = map(np.radians, (lat1, lon1, lat2, lon2))
    h = (np.sin((lat2 - lat1) / 2) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2)
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def _as_meta(node_meta) -> list[NodeMeta]:
    out = []
    for i, rec in enumerate(node_meta):
        if isinstance(rec, NodeMeta):
            out.append(rec)
        elif len(rec) == 3:
            out.append(NodeMeta(str(i), float(rec[0]), float(rec[1]), float(rec[2])))
        else:
            out.append(NodeMeta(str(rec[0]), float(rec[1]), float(rec[2]), float(rec[3])))
    for rec in out:
        if not (-90 <= rec.lat <= 90 and -180 <= rec.lon <= 360):
            raise GraphError(f"invalid coordinates for node {rec.id}: ({rec.lat}, {rec.lon})")
    return out


def knn_affinity(node_meta, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalised affinities ``exp(-(d^2 + h^2))`` and the symmetrised k-NN mask."""
    meta = _as_meta(node_meta)
    n = len(meta)
    if k < 1 or n < k + 1:
        raise GraphError(f"need at least k+1={k + 1} nodes, got {n}")
    lat = np.array([m.lat for m in meta])
    lon = np.array([m.lon for m in meta])
    alt = np.array([m.alt for m in meta])
    dist = haversine_km(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
    d = dist / DISTANCE_SCALE_KM
    h = (alt[:, None] - alt[None, :]) / ALTITUDE_SCALE_M
    affinity = np.exp(-(d ** 2 + h ** 2))
    ranked = dist + np.diag(np.full(n, np.inf))
    mask = np.zeros((n, n), dtype=bool)
    for i in range(n):
        nearest = np.argsort(ranked[i], kind="stable")[:k]
        mask[i, nearest] = True
    mask = mask | mask.T
    np.fill_diagonal(mask, False)
    return affinity, mask


def build_knn_graph(node_meta, k: int = 10) -> Graph:
    """k-nearest-neighbour graph over station coordinates.

    Nonzero weights are ``exp(-(d^2+h^2))`` normalised by the square roots of
    both endpoints' neighbourhood sums, with geodesic distance ``d`` in units
    of 100 km and altitude difference ``h`` in km.
    """
    meta = _as_meta(node_meta)
    affinity, mask = knn_affinity(meta, k)
    w = np.where(mask, affinity, 0.0)
    s = np.sqrt(w.sum(axis=1))
    if np.any(s == 0):
        raise GraphError("a node has no neighbours with nonzero affinity; raise k")
    a = w / np.outer(s, s)
    a = np.where(mask, a, 0.0)
    a = np.maximum(a, a.T)
    try:
        return Graph(a, tuple(meta))
    except GraphError as exc:
        raise GraphError(f"k={k} nearest-neighbour graph: {exc}; raise k") from exc


def build_rbf_adjacency(binary_adjacency, series, window: int = 1000, scale: float = 10.0) -> Graph:
    """Replace unit entries of a binary adjacency by ``exp(-||x_n - x_m||^2 / scale)``.

    ``series`` is N x T; only its first ``window`` columns enter the distance.
    """
    b = np.asarray(binary_adjacency, dtype=np.float64)
    x = np.asarray(series, dtype=np.float64)
    if b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise GraphError("binary adjacency must be square")
    if x.ndim != 2 or x.shape[0] != b.shape[0]:
        raise GraphError(f"series has {x.shape[0] if x.ndim else 0} rows for {b.shape[0]} nodes")
    if x.shape[1] < window:
        raise GraphError(f"series has {x.shape[1]} steps, window needs {window}")
    if not np.array_equal(b, b.T) or np.any(np.diag(b) != 0):
        raise GraphError("binary adjacency must be symmetric with zero diagonal")
    xw = x[:, :window]
    sq = np.sum(xw ** 2, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * xw @ xw.T, 0.0)
    a = np.where(b != 0, np.exp(-d2 / scale), 0.0)
    a = 0.5 * (a + a.T)
    np.fill_diagonal(a, 0.0)
    return Graph(a)


# --- files --------------------------------------------------------------------

def save_adjacency_csv(graph: Graph, path) -> None:
    np.savetxt(path, graph.adjacency, delimiter=",", fmt="%.17g")


def load_adjacency_csv(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise GraphError(f"{path}:{lineno}: unparseable adjacency row") from exc
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise GraphError(f"{path}: ragged adjacency rows")
    return np.array(rows)


def load_node_meta_csv(path) -> list[NodeMeta]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"id", "lat", "lon", "alt"} - set(reader.fieldnames or ())
        if missing:
            raise GraphError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(NodeMeta(row["id"], float(row["lat"]), float(row["lon"]), float(row["alt"])))
            except (TypeError, ValueError) as exc:
                raise GraphError(f"{path}:{lineno}: unparseable node record") from exc
    return out


def save_node_meta_csv(meta: Sequence[NodeMeta], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "lat", "lon", "alt"])
        for m in meta:
            w.writerow([m.id, repr(m.lat), repr(m.lon), repr(m.alt)])


def laplacian_hash(laplacian: np.ndarray) -> str:
    a = np.ascontiguousarray(laplacian, dtype="<f8")
    return hashlib.sha256(str(a.shape).encode() + a.tobytes()).hexdigest()


def save_spectrum(spectrum: Spectrum, path) -> None:
    lap = spectrum.laplacian
    np.savez(path, eigenvalues=spectrum.eigenvalues, eigenvectors=spectrum.eigenvectors,
             laplacian=lap, laplacian_sha256=np.array(laplacian_hash(lap)))


def load_spectrum(path) -> Spectrum:
    with np.load(path) as data:
        return Spectrum(data["eigenvalues"], data["eigenvectors"], data["laplacian"])


def cached_spectrum(graph: Graph, path) -> Spectrum:
    """Load the spectrum cached at ``path`` unless its Laplacian hash is stale."""
    lap = build_laplacian(graph)
    path = Path(path)
    if path.exists():
        with np.load(path) as data:
            if str(data["laplacian_sha256"]) == laplacian_hash(lap):
                return Spectrum(data["eigenvalues"], data["eigenvectors"], data["laplacian"])
    spec = eigendecompose(lap)
    save_spectrum(spec, path)
    return spec


def random_geometric_graph(n: int, k: int = 4, seed: int = 0) -> Graph:
    """Seeded k-NN graph over uniform points in the unit square, Gaussian weights."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(size=(n, 2))
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    kk = min(k, n - 1)
    while True:
        mask = np.zeros((n, n), dtype=bool)
        for i in range(n):
            mask[i, np.argsort(d[i], kind="stable")[1:kk + 1]] = True
        mask |= mask.T
        a = np.where(mask, np.exp(-(d / np.median(d)) ** 2), 0.0)
        np.fill_diagonal(a, 0.0)
        a = np.maximum(a, a.T)
        if _connected(a):
            return Graph(a)
        kk += 1


def path_graph(n: int, weight: float = 1.0) -> Graph:
    a = np.zeros((n, n))
    i = np.arange(n - 1)
    a[i, i + 1] = a[i + 1, i] = weight
    return Graph(a)


def complete_graph(n: int, weight: float = 1.0) -> Graph:
    return Graph(weight * (np.ones((n, n)) - np.eye(n)))


__all__ = [
    "Graph", "Spectrum", "NodeMeta", "GraphError", "EigenError",
    "build_laplacian", "eigh", "eigendecompose", "graph_spectrum", "gft", "igft",
    "build_knn_graph", "build_rbf_adjacency", "knn_affinity", "haversine_km",
    "save_adjacency_csv", "load_adjacency_csv", "load_node_meta_csv", "save_node_meta_csv",
    "save_spectrum", "load_spectrum", "cached_spectrum", "laplacian_hash",
    "random_geometric_graph", "path_graph", "complete_graph",
]
