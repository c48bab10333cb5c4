"""Sampling and interpolation of bandlimited graph signals.

A plan pairs a node subset ``S`` with a frequency subset ``F``. Sampling
gathers the signal at ``S``; interpolation maps the samples back to every node
through the pseudo-inverse of ``U[S, F]`` (the rows of the frequency basis at
the sampled nodes). Reconstruction is exact for signals whose graph Fourier
transform vanishes off ``F`` whenever ``U[S, F]`` has full column rank, and
the error on approximately bandlimited signals is bounded by the off-band
energy divided by the smallest singular value of ``U[S, F]``.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .graph import Spectrum, eigh

RANK_TOL = 1e-10
PINV_RTOL = 1e-10
CONDITION_WARN = 1e8
GREEDY_TIE_TOL = 1e-13
# greedy scores must resolve differences well below GREEDY_TIE_TOL, so the
# small Gram matrices are diagonalised to full precision
GRAM_REL_TOL = 1e-15
PLAN_FORMAT = "sggru-plan"
PLAN_VERSION = 1


class SamplingError(ValueError):
    """Inadmissible or malformed sampling configuration."""


class IllConditionedWarning(UserWarning):
    """The sampled frequency basis is close to rank deficient."""


def _indices(values, upper, what) -> np.ndarray:
    idx = np.asarray(list(values), dtype=np.int64)
    if idx.ndim != 1:
        raise SamplingError(f"{what} must be a flat sequence of indices")
    if idx.size and (idx.min() < 0 or idx.max() >= upper):
        raise SamplingError(f"{what} out of range [0, {upper})")
    if len(set(idx.tolist())) != idx.size:
        raise SamplingError(f"{what} contains duplicates")
    return idx


def build_sampling_operator(sample_nodes: Sequence[int], n_nodes: int) -> np.ndarray:
    """0/1 matrix whose row m selects node ``sample_nodes[m]``."""
    idx = _indices(sample_nodes, n_nodes, "sample_nodes")
    psi = np.zeros((idx.size, n_nodes))
    psi[np.arange(idx.size), idx] = 1.0
    return psi


def singular_values(a: np.ndarray) -> np.ndarray:
    """Singular values of ``a`` in descending order, ``min(a.shape)`` of them.

    Computed with the symmetric Jacobi solver on ``[[0, A], [A^T, 0]]``,
    whose eigenvalues are the singular values and their negatives; this keeps
    small singular values accurate to roughly ``eps * ||A||``.
    """
    a = np.asarray(a, dtype=np.float64)
    m, k = a.shape
    r = min(m, k)
    if r == 0:
        return np.zeros(0)
    aug = np.zeros((m + k, m + k))
    aug[:m, m:] = a
    aug[m:, :m] = a.T
    values, _ = eigh(aug)
    return np.clip(values[::-1][:r], 0.0, None)


class Admissibility(NamedTuple):
    rank_ok: bool
    sv_min: float
    sv_max_complement: float
    complement_ok: bool
    condition: float


def check_admissibility(sample_nodes, freq_indices, spectrum: Spectrum) -> Admissibility:
    """Rank condition on ``U[S, F]`` and the complementary singular value test.

    ``sv_min`` is the K-th singular value of ``U[S, F]`` (zero when M < K) and
    ``sv_max_complement`` the largest singular value of ``U[V \\ S, F]``.
    """
    n = spectrum.n_nodes
    s = _indices(sample_nodes, n, "sample_nodes")
    f = _indices(freq_indices, n, "freq_indices")
    k = f.size
    sub = spectrum.eigenvectors[np.ix_(s, f)]
    sv = singular_values(sub)
    sv_min = float(sv[k - 1]) if (k and sv.size >= k) else 0.0
    sv_max = float(sv[0]) if sv.size else 0.0
    rank = int(np.sum(sv > RANK_TOL))
    rest = np.setdiff1d(np.arange(n), s)
    comp = singular_values(spectrum.eigenvectors[np.ix_(rest, f)]) if rest.size else np.zeros(0)
    sv_c = float(comp[0]) if comp.size else 0.0
    condition = sv_max / sv_min if sv_min > 0 else float("inf")
    return Admissibility(
        rank_ok=(rank == k and k <= s.size),
        sv_min=sv_min,
        sv_max_complement=sv_c,
        complement_ok=bool(sv_c < 1.0 - 1e-9),
        condition=float(condition),
    )


def pinv_gram(a: np.ndarray, rtol: float = PINV_RTOL) -> np.ndarray:
    """Pseudo-inverse of a tall matrix from the eigendecomposition of ``A^T A``.

    Singular values below ``rtol`` times the largest are treated as zero.
    """
    a = np.asarray(a, dtype=np.float64)
    gram = a.T @ a
    mu, v = eigh(0.5 * (gram + gram.T))
    mu = np.clip(mu, 0.0, None)
    sv = np.sqrt(mu)
    keep = sv > rtol * (sv.max() if sv.size else 0.0)
    inv = np.zeros_like(mu)
    inv[keep] = 1.0 / mu[keep]
    return (v * inv) @ v.T @ a.T


def build_interpolator(sample_nodes, freq_indices, spectrum: Spectrum) -> np.ndarray:
    """``U[:, F] pinv(U[S, F])``, the N x M interpolation operator.

    Raises :class:`SamplingError` if ``U[S, F]`` is rank deficient and warns
    with :class:`IllConditionedWarning` when its condition number exceeds 1e8.
    """
    adm = check_admissibility(sample_nodes, freq_indices, spectrum)
    if not adm.rank_ok:
        raise SamplingError(
            f"sampling set is not admissible for |F|={len(list(freq_indices))}: "
            f"smallest singular value {adm.sv_min:.3g}")
    if adm.condition > CONDITION_WARN:
        warnings.warn(f"ill-conditioned sampling set (condition {adm.condition:.3g})",
                      IllConditionedWarning, stacklevel=2)
    s = list(sample_nodes)
    f = list(freq_indices)
    u_f = spectrum.eigenvectors[:, f]
    return u_f @ pinv_gram(u_f[s, :])


# --- greedy E-optimal selection ------------------------------------------------

def _root(fn, lo, hi, iters=200):
    """Root of ``fn`` on each row's bracket ``[lo, hi]`` (negative below the root, positive above).

    ``fn(x)`` returns ``(value, derivative)``. Newton steps are taken when they
    stay inside the current bracket, bisection otherwise.
    """
    lo = lo.copy()
    hi = hi.copy()
    x = 0.5 * (lo + hi)
    tol = 4 * np.finfo(float).eps * np.maximum(np.maximum(np.abs(lo), np.abs(hi)), 1e-300)
    active = np.ones(x.shape, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        for _ in range(iters):
            f, df = fn(x)
            neg = f < 0
            np.copyto(lo, x, where=active & neg)
            np.copyto(hi, x, where=active & ~neg)
            step = x - f / df
            inside = (step >= lo) & (step <= hi)  # false for NaN
            new = np.where(inside, step, 0.5 * (lo + hi))
            done = (np.abs(new - x) <= tol) | (f == 0) | (hi - lo <= tol)
            np.copyto(x, new, where=active & (f != 0))
            active &= ~done
            if not active.any():
                break
    return x


def _secular_terms(w2, lam, x):
    """``sum w2 / (lam - x)`` and its derivative; zero weights contribute nothing.

    Callers suppress the divide warnings raised when ``x`` hits an eigenvalue.
    """
    gap = lam - x[:, None]
    zero = w2 == 0.0
    r = np.where(zero, 0.0, w2 / gap)
    return r.sum(axis=1), np.where(zero, 0.0, r / gap).sum(axis=1)


def _split_pole(w2, lam):
    """Separate the weight on the smallest eigenvalue from the rest.

    Multiplying a secular function by the distance to that pole leaves its
    roots and signs unchanged on the bracket but removes the singularity,
    so Newton steps stay accurate for roots close to the pole.
    """
    rest = w2.copy()
    rest[:, 0] = 0.0
    return w2[:, 0], rest


def _scores_bordered(rows_s, cand, lam, q):
    """Smallest eigenvalue of ``[[G, b], [b^T, d]]`` with ``G = U_S U_S^T``.

    Used while ``|S| < K``; the bordered matrix is the row Gram after adding
    a candidate row. The root of ``x - d + sum w2 / (lam - x)`` lies in
    ``[0, lam[0]]``.
    """
    d = np.sum(cand ** 2, axis=1)
    if rows_s.shape[0] == 0:
        return d
    w0, rest = _split_pole((cand @ rows_s.T @ q) ** 2, lam)
    lam0 = lam[0]

    def neg_g(x):
        s, ds = _secular_terms(rest, lam, x)
        v = x - d + s
        return (lam0 - x) * v + w0, (lam0 - x) * (1.0 + ds) - v

    lo = np.zeros_like(d)
    hi = np.full_like(d, max(lam0, 0.0))
    return _root(neg_g, lo, hi)


def _scores_rank_one(cand, lam, q):
    """Smallest eigenvalue of ``G + u u^T`` with ``G = U_S^T U_S`` (K x K).

    The root of ``1 + sum w2 / (lam - x)`` lies in ``[lam[0], lam[1]]``.
    """
    w0, rest = _split_pole((cand @ q) ** 2, lam)
    unorm = np.sum(cand ** 2, axis=1)
    lam0 = lam[0]
    lo = np.full(cand.shape[0], lam0)
    hi = lam0 + unorm
    if lam.size > 1:
        hi = np.minimum(hi, lam[1])

    def h(x):
        s, ds = _secular_terms(rest, lam, x)
        v = 1.0 + s
        return (x - lam0) * v - w0, v + (x - lam0) * ds

    return _root(h, lo, hi)


def greedy_scores(rows_s: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Squared smallest singular value of ``U_S`` extended by each candidate row."""
    i, k = rows_s.shape
    if i < k:
        g = rows_s @ rows_s.T
        lam, q = eigh(0.5 * (g + g.T), rel_tol=GRAM_REL_TOL)
        return np.clip(_scores_bordered(rows_s, candidates, lam, q), 0.0, None)
    g = rows_s.T @ rows_s
    lam, q = eigh(0.5 * (g + g.T), rel_tol=GRAM_REL_TOL)
    return np.clip(_scores_rank_one(candidates, lam, q), 0.0, None)


def greedy_scores_direct(rows_s: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Reference scorer: explicit SVD of every extended submatrix."""
    out = np.empty(candidates.shape[0])
    for j, row in enumerate(candidates):
        sub = np.vstack([rows_s, row[None, :]])
        out[j] = np.linalg.svd(sub, compute_uv=False)[-1] ** 2
    return out


def select_sampling_set_greedy(spectrum: Spectrum, freq_indices, m_target: int,
                               scorer=greedy_scores) -> list[int]:
    """Grow ``S`` one node at a time, maximising the smallest singular value of ``U[S, F]``.

    Ties within 1e-13 of the best score go to the lowest node index.
    """
    n = spectrum.n_nodes
    f = _indices(freq_indices, n, "freq_indices")
    if not (f.size <= m_target <= n):
        raise SamplingError(f"m_target={m_target} must lie in [{f.size}, {n}]")
    u_f = spectrum.eigenvectors[:, f]
    chosen: list[int] = []
    remaining = np.ones(n, dtype=bool)
    for _ in range(m_target):
        cand = np.flatnonzero(remaining)
        scores = scorer(u_f[chosen, :], u_f[cand, :])
        best = scores.max()
        pick = int(cand[np.flatnonzero(scores >= best - GREEDY_TIE_TOL)[0]])
        chosen.append(pick)
        remaining[pick] = False
    return chosen


def reconstruction_error_bound(residual_norm: float, sv_min: float) -> float:
    """Upper bound ``||eta|| / sv_min`` on the interpolation error."""
    if not sv_min > 0:
        raise SamplingError(f"sv_min must be positive, got {sv_min}")
    if residual_norm < 0:
        raise ValueError("residual norm must be nonnegative")
    return float(residual_norm) / float(sv_min)


# --- bandlimited decomposition and frequency choice ----------------------------

@dataclass(frozen=True, eq=False)
class BandlimitSplit:
    bandlimited_part: np.ndarray
    residual: np.ndarray

    @property
    def epsilon(self) -> float:
        return float(np.linalg.norm(self.residual))


def bandlimit_split(signal, freq_indices, spectrum: Spectrum) -> BandlimitSplit:
    """Split ``x`` into its component in span(U[:, F]) and the orthogonal residual."""
    x = np.asarray(signal, dtype=np.float64)
    if x.shape[0] != spectrum.n_nodes:
        raise ValueError(f"signal has {x.shape[0]} entries, spectrum has {spectrum.n_nodes}")
    f = _indices(freq_indices, spectrum.n_nodes, "freq_indices")
    u_f = spectrum.eigenvectors[:, f]
    xb = u_f @ (u_f.T @ x)
    return BandlimitSplit(xb, x - xb)


def default_k(m: int) -> int:
    return m // 3


def choose_frequency_set(mode: str, spectrum: Spectrum, k: Optional[int] = None,
                         m: Optional[int] = None, calibration_signals=None) -> list[int]:
    """Pick ``F`` as the K smallest graph frequencies or the K most energetic ones.

    ``calibration_signals`` is an N x T matrix (typically the first 100
    snapshots) required in ``dominant`` mode. ``k`` defaults to ``m // 3``.
    Indices are returned in ascending order.
    """
    n = spectrum.n_nodes
    if k is None:
        if m is None:
            raise ValueError("either k or m must be given")
        k = default_k(m)
    if not (0 <= k <= n):
        raise ValueError(f"k={k} out of range for {n} nodes")
    if mode == "smallest":
        return list(range(k))
    if mode == "dominant":
        if calibration_signals is None:
            raise ValueError("dominant mode needs calibration signals")
        x = np.asarray(calibration_signals, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] != n:
            raise ValueError(f"calibration signals have {x.shape[0]} rows, expected {n}")
        energy = np.mean((spectrum.eigenvectors.T @ x) ** 2, axis=1)
        top = np.argsort(-energy, kind="stable")[:k]
        return sorted(int(i) for i in top)
    raise ValueError(f"unknown frequency mode {mode!r}")


# --- plan ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SamplingPlan:
    """Frozen sampling set, frequency set and the operators derived from them."""

    sample_nodes: tuple
    freq_indices: tuple
    sampling_matrix: np.ndarray
    interpolator: np.ndarray
    spectral_interpolator: np.ndarray
    basis: np.ndarray = field(repr=False)
    sv_min: float = 0.0
    condition: float = 1.0

    def __post_init__(self):
        for name in ("sampling_matrix", "interpolator", "spectral_interpolator", "basis"):
            arr = np.array(getattr(self, name), dtype=np.float64, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "sample_nodes", tuple(int(i) for i in self.sample_nodes))
        object.__setattr__(self, "freq_indices", tuple(int(i) for i in self.freq_indices))
        k, m, n = self.n_freqs, self.n_samples, self.n_nodes
        if not (k <= m <= n):
            raise SamplingError(f"need K <= M <= N, got K={k}, M={m}, N={n}")
        shapes = {"sampling_matrix": (m, n), "interpolator": (n, m),
                  "spectral_interpolator": (n, k), "basis": (n, k)}
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise SamplingError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def n_nodes(self) -> int:
        return self.sampling_matrix.shape[1]

    @property
    def n_samples(self) -> int:
        return len(self.sample_nodes)

    @property
    def n_freqs(self) -> int:
        return len(self.freq_indices)

    @property
    def cos_theta(self) -> float:
        return self.sv_min

    @property
    def truncated_gft(self) -> np.ndarray:
        """K x M matrix ``U[S, F]^T`` mapping samples to spectral coefficients."""
        return self.basis[list(self.sample_nodes), :].T

    @property
    def hidden_nodes(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n_nodes), self.sample_nodes)

    def sample(self, x):
        """Gather rows at ``S``; ``x`` may be a vector or have nodes on axis 0."""
        return np.asarray(x)[list(self.sample_nodes)]

    def interpolate(self, samples):
        return self.interpolator @ samples

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps([self.sample_nodes, self.freq_indices]).encode())
        for arr in (self.interpolator, self.spectral_interpolator, self.basis):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        def mat(a):
            return {"shape": list(a.shape), "data": [float(v) for v in a.ravel(order="C")]}
        return {
            "format": PLAN_FORMAT,
            "version": PLAN_VERSION,
            "n_nodes": self.n_nodes,
            "sample_nodes": list(self.sample_nodes),
            "freq_indices": list(self.freq_indices),
            "sv_min": self.sv_min,
            "condition": self.condition,
            "interpolator": mat(self.interpolator),
            "spectral_interpolator": mat(self.spectral_interpolator),
            "basis": mat(self.basis),
            "sha256": self.content_hash(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingPlan":
        if d.get("format") != PLAN_FORMAT or d.get("version") != PLAN_VERSION:
            raise SamplingError("not a sampling plan file of a supported version")

        def mat(entry):
            return np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        plan = cls(
            sample_nodes=d["sample_nodes"],
            freq_indices=d["freq_indices"],
            sampling_matrix=build_sampling_operator(d["sample_nodes"], d["n_nodes"]),
            interpolator=mat(d["interpolator"]),
            spectral_interpolator=mat(d["spectral_interpolator"]),
            basis=mat(d["basis"]),
            sv_min=float(d["sv_min"]),
            condition=float(d["condition"]),
        )
        if "sha256" in d and d["sha256"] != plan.content_hash():
            raise SamplingError("sampling plan payload does not match its hash")
        return plan

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "SamplingPlan":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def make_plan(spectrum: Spectrum, sample_nodes, freq_indices) -> SamplingPlan:
    """Assemble a plan and its operators for a given ``S`` and ``F``.

    When ``S`` covers every node nothing is hidden: nodes are kept in natural
    order and the interpolator is the identity.
    """
    s = list(int(i) for i in sample_nodes)
    f = list(int(i) for i in freq_indices)
    n = spectrum.n_nodes
    full = sorted(s) == list(range(n))
    if full:
        s = list(range(n))
    adm = check_admissibility(s, f, spectrum)
    phi = np.eye(n) if full else build_interpolator(s, f, spectrum)
    basis = spectrum.eigenvectors[:, f]
    return SamplingPlan(
        sample_nodes=s,
        freq_indices=f,
        sampling_matrix=build_sampling_operator(s, spectrum.n_nodes),
        interpolator=phi,
        spectral_interpolator=phi @ basis[s, :],
        basis=basis,
        sv_min=adm.sv_min,
        condition=adm.condition,
    )


def select_plan(spectrum: Spectrum, m: int, freq_indices, selection_freqs=None) -> SamplingPlan:
    """Greedy plan: ``S`` chosen for ``selection_freqs`` (default the M smallest), then built for ``freq_indices``."""
    if m == spectrum.n_nodes:
        return make_plan(spectrum, range(m), freq_indices)
    if selection_freqs is None:
        selection_freqs = list(range(m))
    nodes = select_sampling_set_greedy(spectrum, selection_freqs, m)
    return make_plan(spectrum, nodes, freq_indices)
