"""Windowing, chronological splits, scaling, the training loop and metrics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .data import TimeSeriesDataset
from .nn import NumericalError, OptimizerState, loss_semisupervised, loss_supervised
from .sampling import SamplingPlan

LOSS_MODES = ("supervised", "semisupervised")
MAPE_FLOOR = 1e-6


class PipelineError(ValueError):
    """Invalid protocol input (short series, empty split, bad scaler data)."""


class TrainingDiverged(NumericalError):
    def __init__(self, epoch: int, detail: str = "non-finite loss"):
        super().__init__(f"training diverged in epoch {epoch}: {detail}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    tau: int = 10
    p: int = 1
    batch_size: int = 40
    lr0: float = 1e-4
    decay: float = 0.5
    decay_every: int = 10
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    split_fractions: tuple = (0.70, 0.20, 0.10)
    loss_mode: str = "supervised"

    def __post_init__(self):
        object.__setattr__(self, "split_fractions", tuple(float(f) for f in self.split_fractions))
        if len(self.split_fractions) != 3 or any(f <= 0 for f in self.split_fractions):
            raise ValueError("split_fractions must be three positive numbers")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValueError("split_fractions must sum to 1")
        if self.tau < 1 or self.p < 1 or self.batch_size < 1:
            raise ValueError("tau, p and batch_size must be positive")
        if self.max_epochs < 1 or not 1 <= self.patience <= self.max_epochs:
            raise ValueError("need 1 <= patience <= max_epochs")
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_fractions"] = list(self.split_fractions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown training keys: {sorted(extra)}")
        return cls(**d)


# --- windows -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Windows:
    """Chronological samples: ``inputs`` (W, tau, N), ``labels`` (W, N).

    ``label_index[i]`` is the time index of label ``i``. ``label_mask`` marks
    label entries whose ground truth is known (None means all of them).
    """

    inputs: np.ndarray
    labels: np.ndarray
    label_index: np.ndarray
    label_mask: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i):
        if isinstance(i, slice) or isinstance(i, np.ndarray):
            return Windows(self.inputs[i], self.labels[i], self.label_index[i],
                           None if self.label_mask is None else self.label_mask[i])
        return self.inputs[i], self.labels[i]

    def take(self, idx) -> "Windows":
        return self[np.asarray(idx, dtype=np.int64)]


def make_windows(dataset: TimeSeriesDataset, tau: int, p: int) -> Windows:
    """One sample per valid t: inputs ``x^{t-tau+1..t}`` (observed view), label ``x^{t+p}`` (ground truth)."""
    t_total = dataset.n_steps
    if t_total < tau + p:
        raise PipelineError(f"series of length {t_total} is shorter than tau + p = {tau + p}")
    if not dataset.is_complete:
        raise PipelineError("observed signals contain NaN; fill missing values first")
    x = dataset.signals.T  # T x N
    truth = dataset.ground_truth.T
    count = t_total - tau - p + 1
    starts = np.arange(count)
    inputs = np.stack([x[s:s + tau] for s in starts])
    label_index = starts + tau - 1 + p
    labels = truth[label_index].copy()
    mask = None
    if dataset.truth is None and dataset.missing is not None:
        # observed values double as labels: absent entries have no ground truth
        mask = ~dataset.missing.T[label_index]
    return Windows(inputs, labels, label_index, mask)


def split_sizes(count: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    """Floor allocation for validation and test; the remainder goes to training."""
    n_val = int(math.floor(count * fractions[1] + 1e-9))
    n_test = int(math.floor(count * fractions[2] + 1e-9))
    n_train = count - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise PipelineError(f"{count} windows are too few for a {tuple(fractions)} split")
    return n_train, n_val, n_test


def split_chronological(windows: Windows, fractions=(0.70, 0.20, 0.10)):
    n_train, n_val, _ = split_sizes(len(windows), fractions)
    return (windows[:n_train], windows[n_train:n_train + n_val], windows[n_train + n_val:])


# --- scaling -------------------------------------------------------------------

@dataclass(frozen=True)
class Scaler:
    """Divide by the training maximum absolute value."""

    scale: float

    @classmethod
    def fit(cls, values) -> "Scaler":
        m = float(np.max(np.abs(values))) if np.size(values) else 0.0
        if not m > 0 or not math.isfinite(m):
            raise PipelineError("training data are all zero (or non-finite); cannot normalise")
        return cls(m)

    def transform(self, x):
        return np.asarray(x, dtype=np.float64) / self.scale

    def inverse(self, x):
        return np.asarray(x, dtype=np.float64) * self.scale


def fit_scaler(train: Windows, plan: SamplingPlan) -> Scaler:
    """Scaler from the model-visible training inputs (sampled nodes only)."""
    return Scaler.fit(train.inputs[:, :, plan.sample_nodes])


# --- training ------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainResult:
    model: object
    history: list
    best_epoch: int
    best_val_loss: float
    stopped_epoch: int
    scaler: Scaler
    optimizer: OptimizerState

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for r in self.history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.lr)])
        return buf.getvalue()


def batch_loss(model, plan: SamplingPlan, windows: Windows, scaler: Scaler, loss_mode: str):
    """Forward a batch; returns ``(loss, grad wrt predictions, trace)``."""
    x = scaler.transform(windows.inputs[:, :, plan.sample_nodes])
    pred, trace = model.forward(x)
    if loss_mode == "semisupervised":
        sampled = scaler.transform(windows.labels[:, plan.sample_nodes])
        loss, grad = loss_semisupervised(pred, sampled, plan)
    else:
        loss, grad = loss_supervised(pred, scaler.transform(windows.labels), windows.label_mask)
    return loss, grad, trace


def _mean_loss(model, plan, windows, scaler, loss_mode, batch_size):
    total = 0.0
    for lo in range(0, len(windows), batch_size):
        part = windows[lo:lo + batch_size]
        loss, _, _ = batch_loss(model, plan, part, scaler, loss_mode)
        total += loss * len(part)
    return total / len(windows)


def fit(model, train: Windows, val: Windows, plan: SamplingPlan, config: TrainConfig,
        scaler: Scaler, log: Optional[Callable[[EpochRecord], None]] = None) -> TrainResult:
    """Mini-batch RMSprop with step decay, early stopping and best-validation restore."""
    if model.dims.tau != config.tau or model.dims.p != config.p:
        raise PipelineError("model (tau, p) differ from the training config")
    if len(train) == 0 or len(val) == 0:
        raise PipelineError("empty training or validation split")
    opt = OptimizerState(learning_rate=config.lr0, decay=config.decay,
                         decay_every=config.decay_every)
    rng = np.random.default_rng([config.seed, 0x5EED])
    history = []
    best_loss, best_epoch, best_state = math.inf, 0, model.state_arrays()
    stale = 0
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        lr = opt.learning_rate
        order = rng.permutation(len(train))
        total = 0.0
        for lo in range(0, len(train), config.batch_size):
            batch = train.take(order[lo:lo + config.batch_size])
            try:
                loss, grad, trace = batch_loss(model, plan, batch, scaler, config.loss_mode)
            except NumericalError as exc:
                raise TrainingDiverged(epoch, str(exc)) from exc
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch)
            model.apply_update(model.backward(trace, grad), opt)
            total += loss * len(batch)
        train_loss = total / len(train)
        try:
            val_loss = _mean_loss(model, plan, val, scaler, config.loss_mode, config.batch_size)
        except NumericalError as exc:
            raise TrainingDiverged(epoch, str(exc)) from exc
        if not math.isfinite(val_loss):
            raise TrainingDiverged(epoch, "non-finite validation loss")
        record = EpochRecord(epoch, train_loss, val_loss, lr)
        history.append(record)
        if log is not None:
            log(record)
        if val_loss < best_loss:
            best_loss, best_epoch, best_state = val_loss, epoch, model.state_arrays()
            stale = 0
        else:
            stale += 1
        opt.end_epoch()
        if stale >= config.patience:
            break
    model.load_state_arrays(best_state)
    return TrainResult(model, history, best_epoch, best_loss, epoch, scaler, opt)


@dataclass
class PreparedData:
    train: Windows
    val: Windows
    test: Windows
    scaler: Scaler


def prepare(dataset: TimeSeriesDataset, plan: SamplingPlan, config: TrainConfig) -> PreparedData:
    windows = make_windows(dataset, config.tau, config.p)
    train_w, val_w, test_w = split_chronological(windows, config.split_fractions)
    return PreparedData(train_w, val_w, test_w, fit_scaler(train_w, plan))


def train(model, dataset: TimeSeriesDataset, plan: SamplingPlan, config: TrainConfig,
          log=None) -> tuple[TrainResult, PreparedData]:
    """Window, split and scale ``dataset``, then :func:`fit` the model."""
    if dataset.n_nodes != plan.n_nodes:
        raise PipelineError("dataset and plan disagree on N")
    data = prepare(dataset, plan, config)
    return fit(model, data.train, data.val, plan, config, data.scaler, log), data


# --- metrics -------------------------------------------------------------------

@dataclass(frozen=True)
class UnitConversion:
    """Affine map applied to predictions and truth before MAPE (e.g. Celsius to Fahrenheit)."""

    scale: float = 1.0
    offset: float = 0.0

    PRESETS = {"celsius_to_fahrenheit": (1.8, 32.0), "none": (1.0, 0.0)}

    @classmethod
    def parse(cls, spec) -> Optional["UnitConversion"]:
        if spec is None:
            return None
        if isinstance(spec, str):
            if spec not in cls.PRESETS:
                raise ValueError(f"unknown unit conversion {spec!r}")
            return cls(*cls.PRESETS[spec])
        return cls(float(spec.get("scale", 1.0)), float(spec.get("offset", 0.0)))

    def __call__(self, x):
        return np.asarray(x) * self.scale + self.offset


def error_metrics(pred, truth, mask=None, mape_conversion: Optional[UnitConversion] = None) -> dict:
    """MAE, RMSE (mean of per-snapshot RMS) and MAPE in percent over (T_t, N) arrays.

    MAPE drops terms whose (converted) truth is below 1e-6 in magnitude.
    """
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    valid = np.ones(truth.shape, bool) if mask is None else np.atleast_2d(mask).astype(bool)
    if not valid.any():
        raise PipelineError("no entries to evaluate")
    err = np.where(valid, pred - truth, 0.0)
    mae = float(np.abs(err).sum() / valid.sum())
    rows = valid.any(axis=1)
    per_snap = np.sqrt((err[rows] ** 2).sum(axis=1) / valid[rows].sum(axis=1))
    rmse = float(per_snap.mean())
    conv = mape_conversion
    pt = conv(pred) if conv else pred
    tt = conv(truth) if conv else truth
    keep = valid & (np.abs(tt) >= MAPE_FLOOR)
    if keep.any():
        mape = float(100.0 * np.mean(np.abs(pt[keep] - tt[keep]) / np.abs(tt[keep])))
    else:
        mape = math.nan
    return {"mae": mae, "rmse": rmse, "mape": mape, "mape_terms": int(keep.sum())}


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    mape: float
    per_node_mae: list
    n_test: int
    scenario: str = ""
    subsets: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario", "subset", "mae", "rmse", "mape", "n_test"])
        w.writerow([self.scenario, "all", repr(self.mae), repr(self.rmse), repr(self.mape), self.n_test])
        for name in sorted(self.subsets):
            s = self.subsets[name]
            w.writerow([self.scenario, name, repr(s["mae"]), repr(s["rmse"]), repr(s["mape"]), self.n_test])
        return buf.getvalue()


def predict(model, plan: SamplingPlan, windows: Windows, scaler: Scaler,
            batch_size: int = 256) -> np.ndarray:
    """Predictions in original units, shape (W, N)."""
    out = []
    for lo in range(0, len(windows), batch_size):
        x = scaler.transform(windows.inputs[lo:lo + batch_size][:, :, plan.sample_nodes])
        pred, _ = model.forward(x)
        out.append(pred)
    return scaler.inverse(np.concatenate(out, axis=0))


def metrics_report(pred, truth, mask=None, scenario: str = "", subsets: Optional[dict] = None,
                   mape_conversion: Optional[UnitConversion] = None) -> MetricsReport:
    pred = np.atleast_2d(pred)
    truth = np.atleast_2d(truth)
    if pred.shape[0] == 0:
        raise PipelineError("empty test set")
    base = error_metrics(pred, truth, mask, mape_conversion)
    valid = np.ones(truth.shape, bool) if mask is None else np.asarray(mask, bool)
    abs_err = np.where(valid, np.abs(pred - truth), 0.0)
    counts = valid.sum(axis=0)
    per_node = np.where(counts > 0, abs_err.sum(axis=0) / np.maximum(counts, 1), 0.0)
    parts = {}
    for name, nodes in (subsets or {}).items():
        nodes = np.asarray(nodes, dtype=np.int64)
        if nodes.size == 0:
            continue
        sub = error_metrics(pred[:, nodes], truth[:, nodes], valid[:, nodes], mape_conversion)
        parts[name] = sub
    return MetricsReport(base["mae"], base["rmse"], base["mape"], per_node.tolist(),
                         int(pred.shape[0]), scenario, parts)


def evaluate(model, test: Windows, plan: SamplingPlan, scaler: Scaler, scenario: str = "",
             mape_conversion: Optional[UnitConversion] = None) -> MetricsReport:
    """Score predictions against full ground-truth labels, with known/hidden breakdowns."""
    if len(test) == 0:
        raise PipelineError("empty test set")
    pred = predict(model, plan, test, scaler)
    subsets = {"known": plan.sample_nodes, "hidden": plan.hidden_nodes}
    return metrics_report(pred, test.labels, test.label_mask, scenario, subsets, mape_conversion)


__all__ = [
    "TrainConfig", "TrainingDiverged", "PipelineError", "Windows", "make_windows", "split_sizes",
    "split_chronological", "Scaler", "fit_scaler", "EpochRecord", "TrainResult", "fit", "train",
    "prepare", "PreparedData", "batch_loss", "UnitConversion", "error_metrics", "MetricsReport",
    "metrics_report", "predict", "evaluate", "LOSS_MODES",
]
