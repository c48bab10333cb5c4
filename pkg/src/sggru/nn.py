"""Dense GRU, fully connected layer, MSE losses and RMSprop, all in float64.

Every forward has a matching hand-written backward. Sequences are laid out
as ``(steps, batch, features)``; single vectors are accepted where noted and
treated as a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import _kernels

ACTIVATIONS = {"sigmoid": _kernels.SIGMOID, "tanh": _kernels.TANH}
GRU_FIELDS = ("w_q", "v_q", "b_q", "w_r", "v_r", "b_r", "w_c", "v_c", "b_c")


class NumericalError(FloatingPointError):
    """Non-finite values appeared in a forward pass, loss or gradient."""


def sigmoid(x):
    with np.errstate(over="ignore", under="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in) if fan_in else 0.0
    return rng.uniform(-bound, bound, size=shape)


@dataclass(eq=False)
class GruParams:
    w_q: np.ndarray
    v_q: np.ndarray
    b_q: np.ndarray
    w_r: np.ndarray
    v_r: np.ndarray
    b_r: np.ndarray
    w_c: np.ndarray
    v_c: np.ndarray
    b_c: np.ndarray
    candidate_activation: str = "sigmoid"

    def __post_init__(self):
        if self.candidate_activation not in ACTIVATIONS:
            raise ValueError(f"candidate_activation must be one of {sorted(ACTIVATIONS)}")
        for name in GRU_FIELDS:
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))
        d = self.dim
        for name in GRU_FIELDS:
            arr = getattr(self, name)
            want = (d,) if name.startswith("b_") else (d, d)
            if arr.shape != want:
                raise ValueError(f"{name} has shape {arr.shape}, expected {want}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")

    @property
    def dim(self) -> int:
        return self.b_q.shape[0]

    @classmethod
    def zeros(cls, d: int, candidate_activation: str = "sigmoid") -> "GruParams":
        kw = {n: np.zeros(d) if n.startswith("b_") else np.zeros((d, d)) for n in GRU_FIELDS}
        return cls(**kw, candidate_activation=candidate_activation)

    @classmethod
    def init(cls, d: int, rng: np.random.Generator,
             candidate_activation: str = "sigmoid") -> "GruParams":
        kw = {n: _uniform(rng, (d,) if n.startswith("b_") else (d, d), d) for n in GRU_FIELDS}
        return cls(**kw, candidate_activation=candidate_activation)

    def arrays(self) -> dict:
        return {n: getattr(self, n) for n in GRU_FIELDS}

    def copy(self) -> "GruParams":
        return GruParams(**{n: a.copy() for n, a in self.arrays().items()},
                         candidate_activation=self.candidate_activation)


@dataclass(eq=False)
class DenseParams:
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("dense weight must be O x I with a length-O bias")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("dense parameters have non-finite entries")

    @classmethod
    def init(cls, n_out: int, n_in: int, rng: np.random.Generator) -> "DenseParams":
        return cls(_uniform(rng, (n_out, n_in), n_in), _uniform(rng, (n_out,), n_in))

    @classmethod
    def zeros(cls, n_out: int, n_in: int) -> "DenseParams":
        return cls(np.zeros((n_out, n_in)), np.zeros(n_out))

    def arrays(self) -> dict:
        return {"weight": self.weight, "bias": self.bias}

    def copy(self) -> "DenseParams":
        return DenseParams(self.weight.copy(), self.bias.copy())


# --- GRU -----------------------------------------------------------------------

@dataclass
class GruTrace:
    """Intermediates of one forward pass, needed by the backward pass."""

    x: np.ndarray
    hs: np.ndarray
    qs: np.ndarray
    rs: np.ndarray
    cs: np.ndarray
    params: GruParams = field(repr=False)
    squeeze: bool = False

    @property
    def steps(self) -> int:
        return self.x.shape[0]


def gru_sequence_forward(xs, params: GruParams, h0=None) -> tuple[np.ndarray, GruTrace]:
    """Run the cell over ``xs`` of shape (steps, batch, D) or (steps, D).

    Returns the hidden states after every step, shaped like ``xs``, and the trace.
    """
    xs = np.asarray(xs, dtype=np.float64)
    squeeze = xs.ndim == 2
    if squeeze:
        xs = xs[:, None, :]
    d = params.dim
    if xs.ndim != 3 or xs.shape[2] != d:
        raise ValueError(f"inputs must have trailing dimension {d}, got shape {xs.shape}")
    xs = np.ascontiguousarray(xs)
    if h0 is None:
        h0 = np.zeros((xs.shape[1], d))
    else:
        h0 = np.ascontiguousarray(np.atleast_2d(h0), dtype=np.float64)
        if h0.shape != (xs.shape[1], d):
            raise ValueError(f"initial state has shape {h0.shape}, expected {(xs.shape[1], d)}")
    p = params
    hs, qs, rs, cs = _kernels.gru_forward(
        xs, h0, p.w_q, p.v_q, p.b_q, p.w_r, p.v_r, p.b_r, p.w_c, p.v_c, p.b_c,
        ACTIVATIONS[p.candidate_activation])
    if not np.all(np.isfinite(hs)):
        raise NumericalError("non-finite hidden state in GRU forward pass")
    trace = GruTrace(xs, hs, qs, rs, cs, params, squeeze)
    out = hs[1:]
    return (out[:, 0, :] if squeeze else out), trace


def gru_sequence_backward(trace: GruTrace, output_grads) -> tuple[dict, np.ndarray, np.ndarray]:
    """Backpropagation through time.

    ``output_grads`` holds the loss gradient with respect to each returned
    hidden state, shaped like the forward output. Returns parameter gradients
    (dict keyed by field name), input gradients and the gradient on ``h0``.
    """
    g = np.asarray(output_grads, dtype=np.float64)
    if trace.squeeze and g.ndim == 2:
        g = g[:, None, :]
    expected = trace.hs[1:].shape
    if g.shape != expected:
        raise ValueError(f"output gradients have shape {g.shape}, expected {expected}")
    p = trace.params
    dx, dh0, grads = _kernels.gru_backward(
        trace.x, trace.hs, trace.qs, trace.rs, trace.cs, np.ascontiguousarray(g),
        p.w_q, p.v_q, p.w_r, p.v_r, p.w_c, p.v_c, ACTIVATIONS[p.candidate_activation])
    if trace.squeeze:
        dx, dh0 = dx[:, 0, :], dh0[0]
    return grads, dx, dh0


def final_state_grads(trace: GruTrace, dh_final) -> np.ndarray:
    """Upstream gradient array that is zero except on the last hidden state."""
    g = np.zeros_like(trace.hs[1:])
    g[-1] = np.asarray(dh_final).reshape(g[-1].shape)
    return g[:, 0, :] if trace.squeeze else g


def gru_cell_forward(x, h_prev, params: GruParams) -> tuple[np.ndarray, GruTrace]:
    """Single step: gates, candidate and the convex state update."""
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x.shape != h_prev.shape:
        raise ValueError(f"input shape {x.shape} does not match state shape {h_prev.shape}")
    hs, trace = gru_sequence_forward(x[None], params, h0=h_prev)
    return hs[0], trace


def gru_cell_backward(trace: GruTrace, dh) -> tuple[dict, np.ndarray, np.ndarray]:
    grads, dx, dh_prev = gru_sequence_backward(trace, np.asarray(dh)[None])
    return grads, dx[0], dh_prev


# --- dense -----------------------------------------------------------------------

def dense_forward(x, params: DenseParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.weight.shape[1]:
        raise ValueError(f"input dimension {x.shape[-1]} != {params.weight.shape[1]}")
    return x @ params.weight.T + params.bias


def dense_backward(x, params: DenseParams, dout) -> tuple[dict, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    dout = np.asarray(dout, dtype=np.float64)
    x2 = np.atleast_2d(x)
    d2 = np.atleast_2d(dout)
    grads = {"weight": d2.T @ x2, "bias": d2.sum(axis=0)}
    dx = dout @ params.weight
    return grads, dx


# --- losses ----------------------------------------------------------------------

def loss_supervised(predictions, labels, mask=None) -> tuple[float, np.ndarray]:
    """Mean squared error over a batch of N-dimensional snapshots.

    ``mask`` (same shape, True = present) drops entries from both the sum and
    the count; without a mask the normaliser is batch size times N.
    """
    pred = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    lab = np.atleast_2d(np.asarray(labels, dtype=np.float64))
    if pred.shape != lab.shape:
        raise ValueError(f"prediction shape {pred.shape} != label shape {lab.shape}")
    if pred.shape[0] == 0:
        raise ValueError("empty batch")
    diff = pred - lab
    if mask is None:
        count = diff.size
    else:
        mask = np.atleast_2d(np.asarray(mask, dtype=bool))
        diff = np.where(mask, diff, 0.0)
        count = int(mask.sum())
        if count == 0:
            raise ValueError("mask excludes every entry")
    with np.errstate(over="ignore"):  # callers check the loss for finiteness
        loss = float(np.sum(diff ** 2) / count)
    grad = 2.0 * diff / count
    return loss, grad.reshape(np.shape(predictions))


def interpolated_target(sampled_labels, plan) -> np.ndarray:
    """Labels on every node: samples copied at ``S``, interpolated elsewhere."""
    xs = np.atleast_2d(np.asarray(sampled_labels, dtype=np.float64))
    if xs.shape[-1] != plan.n_samples:
        raise ValueError(f"sampled labels have {xs.shape[-1]} entries, plan samples {plan.n_samples}")
    target = xs @ plan.interpolator.T
    target[:, list(plan.sample_nodes)] = xs
    return target


def loss_semisupervised(predictions, sampled_labels, plan) -> tuple[float, np.ndarray]:
    """MSE against the interpolated sampled labels."""
    pred = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    target = interpolated_target(sampled_labels, plan)
    loss, grad = loss_supervised(pred, target)
    return loss, grad.reshape(np.shape(predictions))


# --- optimiser -------------------------------------------------------------------

@dataclass
class OptimizerState:
    """RMSprop accumulators plus the step-decay learning-rate schedule."""

    learning_rate: float = 1e-4
    smoothing: float = 0.99
    epsilon: float = 1e-8
    decay: float = 0.5
    decay_every: int = 10
    epoch: int = 0
    accumulators: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.smoothing < 1:
            raise ValueError("smoothing must lie in (0, 1)")

    def end_epoch(self) -> None:
        """Count a finished epoch; the rate is multiplied by ``decay`` every ``decay_every``."""
        self.epoch += 1
        if self.decay_every and self.epoch % self.decay_every == 0:
            self.learning_rate *= self.decay

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "accumulators"}
        d["accumulators"] = {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                             for k, v in self.accumulators.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerState":
        d = dict(d)
        acc = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
               for k, v in d.pop("accumulators", {}).items()}
        return cls(**d, accumulators=acc)


def rmsprop_step(params: dict, grads: dict, state: OptimizerState) -> dict:
    """In-place RMSprop update of every array in ``params`` (same keys as ``grads``).

    Returns ``params`` for convenience.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}")
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        acc = state.accumulators.get(name)
        if acc is None:
            acc = np.zeros_like(p)
        acc = state.smoothing * acc + (1.0 - state.smoothing) * g * g
        state.accumulators[name] = acc
        p -= state.learning_rate * g / (np.sqrt(acc) + state.epsilon)
    return params


def numerical_gradient(fn, array: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``fn()`` with respect to ``array`` (perturbed in place)."""
    grad = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = array[idx]
        array[idx] = orig + h
        fp = fn()
        array[idx] = orig - h
        fm = fn()
        array[idx] = orig
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def max_relative_error(analytic, numeric, floor: float = 1e-7) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor turns the measure into an absolute one for entries that are
    themselves at finite-difference noise level.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


__all__ = [
    "GruParams", "DenseParams", "GruTrace", "OptimizerState", "NumericalError",
    "gru_cell_forward", "gru_cell_backward", "gru_sequence_forward", "gru_sequence_backward",
    "final_state_grads", "dense_forward", "dense_backward", "loss_supervised",
    "loss_semisupervised", "interpolated_target", "rmsprop_step", "numerical_gradient",
    "max_relative_error", "sigmoid",
]
