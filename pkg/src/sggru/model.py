"""SG-GRU: parallel vertex-domain and spectral GRUs fused by a dense layer.

Both branches consume the sampled window. The vertex GRU runs on the M
sampled values, the spectral GRU on their K truncated graph Fourier
coefficients ``U[S, F]^T x_S``. Final hidden states are interpolated to all N
nodes, stacked into a 2N vector and mapped to the N-node prediction.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .nn import (
    DenseParams,
    GruParams,
    OptimizerState,
    dense_backward,
    dense_forward,
    final_state_grads,
    gru_sequence_backward,
    gru_sequence_forward,
    rmsprop_step,
)
from .sampling import SamplingPlan, default_k

CHECKPOINT_FORMAT = "sggru-checkpoint"
CHECKPOINT_VERSION = 1


class StaleTraceError(RuntimeError):
    """A backward pass was requested with a trace from older parameters."""


@dataclass(frozen=True)
class ModelDims:
    n: int
    m: int
    k: int
    tau: int
    p: int


def estimate_flops(n: int, m: int, k: int, tau: int) -> int:
    """Per-iteration cost ``KM + 6 tau (M^2 + K^2) + N (K + M) + 2 N^2``."""
    return k * m + 6 * tau * (m * m + k * k) + n * (k + m) + 2 * n * n


def _hash_arrays(arrays: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        h.update(name.encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def _as_batch(window, m):
    w = np.asarray(window, dtype=np.float64)
    single = w.ndim == 2
    if single:
        w = w[None]
    if w.ndim != 3 or w.shape[2] != m:
        raise ValueError(f"window must be (tau, {m}) or (batch, tau, {m}); got {np.shape(window)}")
    # (batch, tau, M) -> (tau, batch, M)
    return np.ascontiguousarray(w.transpose(1, 0, 2)), single


@dataclass
class ForwardTrace:
    gru: object
    sgru: object
    stacked: Optional[np.ndarray]
    version: int
    single: bool


class _Trainable:
    """Shared parameter bookkeeping for the trainable models."""

    kind = "base"

    def __init__(self):
        self.version = 0

    def param_groups(self) -> dict:
        raise NotImplementedError

    def parameters(self) -> dict:
        """Flat ``"group.field" -> array`` mapping; arrays are live views."""
        out = {}
        for group, params in self.param_groups().items():
            for name, arr in params.arrays().items():
                out[f"{group}.{name}"] = arr
        return out

    @property
    def n_params(self) -> int:
        return int(sum(a.size for a in self.parameters().values()))

    def apply_update(self, grads: dict, state: OptimizerState) -> None:
        rmsprop_step(self.parameters(), grads, state)
        self.version += 1

    def state_arrays(self) -> dict:
        return {k: v.copy() for k, v in self.parameters().items()}

    def load_state_arrays(self, arrays: dict) -> None:
        params = self.parameters()
        if set(arrays) != set(params):
            raise ValueError("parameter names do not match the model")
        for k, v in arrays.items():
            if params[k].shape != np.shape(v):
                raise ValueError(f"{k} has shape {np.shape(v)}, expected {params[k].shape}")
            params[k][...] = v
        self.version += 1

    def content_hash(self) -> str:
        return _hash_arrays(self.parameters())

    def _check_trace(self, trace: ForwardTrace):
        if trace.version != self.version:
            raise StaleTraceError("parameters changed since this forward pass")


class SgGruModel(_Trainable):
    """Vertex GRU (dimension M) and spectral GRU (dimension K) with a 2N -> N fusion layer.

    The plan's interpolators and truncated GFT are fixed; only ``gru``,
    ``sgru`` and ``fusion`` are trained.
    """

    kind = "sggru"

    def __init__(self, gru: GruParams, sgru: GruParams, fusion: DenseParams,
                 plan: SamplingPlan, dims: ModelDims, seed: Optional[int] = None):
        super().__init__()
        if dims.m != gru.dim or dims.k != sgru.dim:
            raise ValueError("GRU dimensions do not match (M, K)")
        if fusion.weight.shape != (dims.n, 2 * dims.n):
            raise ValueError(f"fusion weight must be {dims.n} x {2 * dims.n}")
        if (plan.n_nodes, plan.n_samples, plan.n_freqs) != (dims.n, dims.m, dims.k):
            raise ValueError("plan is inconsistent with (N, M, K)")
        self.gru = gru
        self.sgru = sgru
        self.fusion = fusion
        self.plan = plan
        self.dims = dims
        self.seed = seed
        self._gft = np.ascontiguousarray(plan.truncated_gft.T)  # M x K
        self._phi = plan.interpolator
        self._phi_hat = plan.spectral_interpolator

    def param_groups(self) -> dict:
        return {"gru": self.gru, "sgru": self.sgru, "fusion": self.fusion}

    def forward(self, window):
        """Predict the N-node snapshot from a sampled window (tau, M) or a batch (B, tau, M)."""
        x, single = _as_batch(window, self.dims.m)
        xhat = np.ascontiguousarray(x @ self._gft)
        ys, tr_g = gru_sequence_forward(x, self.gru)
        zs, tr_s = gru_sequence_forward(xhat, self.sgru)
        y = ys[-1] @ self._phi.T
        z = zs[-1] @ self._phi_hat.T
        stacked = np.concatenate([y, z], axis=1)
        pred = dense_forward(stacked, self.fusion)
        trace = ForwardTrace(tr_g, tr_s, stacked, self.version, single)
        return (pred[0] if single else pred), trace

    def backward(self, trace: ForwardTrace, grad_output) -> dict:
        """Gradients for every trainable array, keyed like :meth:`parameters`."""
        self._check_trace(trace)
        g = np.atleast_2d(np.asarray(grad_output, dtype=np.float64))
        n = self.dims.n
        fusion_g, d_stacked = dense_backward(trace.stacked, self.fusion, g)
        dy_s = d_stacked[:, :n] @ self._phi
        dz_f = d_stacked[:, n:] @ self._phi_hat
        gru_g, _, _ = gru_sequence_backward(trace.gru, final_state_grads(trace.gru, dy_s))
        sgru_g, _, _ = gru_sequence_backward(trace.sgru, final_state_grads(trace.sgru, dz_f))
        out = {f"gru.{k}": v for k, v in gru_g.items()}
        out.update({f"sgru.{k}": v for k, v in sgru_g.items()})
        out.update({f"fusion.{k}": v for k, v in fusion_g.items()})
        return out


class BaselineGruModel(_Trainable):
    """A single vertex-domain GRU whose final state is interpolated by the plan.

    With ``readout`` set, an affine M -> M layer sits between the GRU state
    and the interpolator, so the output range is not tied to the range of
    the candidate activation.
    """

    kind = "baseline"

    def __init__(self, gru: GruParams, plan: SamplingPlan, dims: ModelDims,
                 seed: Optional[int] = None, readout: Optional[DenseParams] = None):
        super().__init__()
        if gru.dim != dims.m or plan.n_samples != dims.m or plan.n_nodes != dims.n:
            raise ValueError("baseline dimensions are inconsistent with the plan")
        if readout is not None and readout.weight.shape != (dims.m, dims.m):
            raise ValueError(f"read-out weight must be {dims.m} x {dims.m}")
        self.gru = gru
        self.readout = readout
        self.plan = plan
        self.dims = dims
        self.seed = seed
        self._phi = plan.interpolator

    def param_groups(self) -> dict:
        groups = {"gru": self.gru}
        if self.readout is not None:
            groups["readout"] = self.readout
        return groups

    def forward(self, window):
        x, single = _as_batch(window, self.dims.m)
        ys, tr_g = gru_sequence_forward(x, self.gru)
        h = ys[-1]
        out = h if self.readout is None else dense_forward(h, self.readout)
        pred = out @ self._phi.T
        trace = ForwardTrace(tr_g, None, h, self.version, single)
        return (pred[0] if single else pred), trace

    def backward(self, trace: ForwardTrace, grad_output) -> dict:
        self._check_trace(trace)
        g = np.atleast_2d(np.asarray(grad_output, dtype=np.float64)) @ self._phi
        out = {}
        if self.readout is not None:
            readout_g, g = dense_backward(trace.stacked, self.readout, g)
            out.update({f"readout.{k}": v for k, v in readout_g.items()})
        gru_g, _, _ = gru_sequence_backward(trace.gru, final_state_grads(trace.gru, g))
        out.update({f"gru.{k}": v for k, v in gru_g.items()})
        return out


def _dims(n, m, k, tau, p, plan):
    if k is None:
        k = default_k(m)
    dims = ModelDims(int(n), int(m), int(k), int(tau), int(p))
    if not (1 <= dims.k <= dims.m <= dims.n):
        raise ValueError(f"need 1 <= K <= M <= N, got K={dims.k}, M={dims.m}, N={dims.n}")
    if dims.tau < 1 or dims.p < 1:
        raise ValueError("tau and p must be positive")
    if (plan.n_nodes, plan.n_samples, plan.n_freqs) != (dims.n, dims.m, dims.k):
        raise ValueError(
            f"plan has (N, M, K)=({plan.n_nodes}, {plan.n_samples}, {plan.n_freqs}), "
            f"model asks for ({dims.n}, {dims.m}, {dims.k})")
    return dims


def init_model(n: int, m: int, k: Optional[int] = None, tau: int = 10, p: int = 1,
               plan: SamplingPlan = None, seed: int = 0,
               candidate_activation: str = "sigmoid") -> SgGruModel:
    """Seeded SG-GRU; ``k`` defaults to ``m // 3``."""
    dims = _dims(n, m, k, tau, p, plan)
    rng = np.random.default_rng(seed)
    gru = GruParams.init(dims.m, rng, candidate_activation)
    sgru = GruParams.init(dims.k, rng, candidate_activation)
    fusion = DenseParams.init(dims.n, 2 * dims.n, rng)
    return SgGruModel(gru, sgru, fusion, plan, dims, seed)


def zero_model(plan: SamplingPlan, tau: int = 10, p: int = 1,
               candidate_activation: str = "sigmoid") -> SgGruModel:
    dims = _dims(plan.n_nodes, plan.n_samples, plan.n_freqs, tau, p, plan)
    return SgGruModel(GruParams.zeros(dims.m, candidate_activation),
                      GruParams.zeros(dims.k, candidate_activation),
                      DenseParams.zeros(dims.n, 2 * dims.n), plan, dims, None)


def init_baseline(n: int, m: int, tau: int = 10, p: int = 1, plan: SamplingPlan = None,
                  seed: int = 0, candidate_activation: str = "sigmoid",
                  readout: bool = False) -> BaselineGruModel:
    dims = _dims(n, m, plan.n_freqs, tau, p, plan)
    rng = np.random.default_rng(seed)
    gru = GruParams.init(dims.m, rng, candidate_activation)
    dense = DenseParams.init(dims.m, dims.m, rng) if readout else None
    return BaselineGruModel(gru, plan, dims, seed, dense)


# --- checkpoints ---------------------------------------------------------------

def save_checkpoint(model, path, optimizer: Optional[OptimizerState] = None) -> None:
    """JSON container: parameters row-major, dimensions, flags, optimiser and seed."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "dims": vars(model.dims),
        "seed": model.seed,
        "candidate_activation": model.gru.candidate_activation,
        "plan_sha256": model.plan.content_hash(),
        "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                   for k, v in model.parameters().items()},
        "optimizer": optimizer.to_dict() if optimizer is not None else None,
        "model_sha256": model.content_hash(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path, plan: SamplingPlan):
    """Rebuild a model (and optimiser state, if stored) against ``plan``."""
    with open(path) as fh:
        d = json.load(fh)
    if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a supported checkpoint")
    if d["plan_sha256"] != plan.content_hash():
        raise ValueError(f"{path}: checkpoint was trained with a different sampling plan")
    dims = d["dims"]
    act = d["candidate_activation"]
    if d["kind"] == "sggru":
        model = zero_model(plan, dims["tau"], dims["p"], act)
    elif d["kind"] == "baseline":
        model = init_baseline(dims["n"], dims["m"], dims["tau"], dims["p"], plan, 0, act,
                              readout="readout.weight" in d["params"])
    else:
        raise ValueError(f"{path}: unknown model kind {d['kind']!r}")
    model.seed = d["seed"]
    arrays = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
              for k, v in d["params"].items()}
    model.load_state_arrays(arrays)
    if model.content_hash() != d["model_sha256"]:
        raise ValueError(f"{path}: parameter payload does not match its hash")
    opt = OptimizerState.from_dict(d["optimizer"]) if d.get("optimizer") else None
    return model, opt
