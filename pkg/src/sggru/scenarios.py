"""Application runners: supervised, semi-supervised, noisy and missing-value forecasting."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .data import (
    ARModel,
    CorruptionSpec,
    TimeSeriesDataset,
    fill_missing,
    generate_synthetic,
    inject_missing,
    inject_noise,
    load_dataset,
)
from .graph import graph_spectrum, random_geometric_graph
from .model import estimate_flops, init_baseline, init_model, save_checkpoint
from .pipeline import TrainConfig, UnitConversion, evaluate, predict, train
from .sampling import choose_frequency_set, default_k, select_plan

SCENARIOS = ("supervised", "semisupervised", "noise", "missing")
MODELS = ("sggru", "baseline")
DEFAULT_FRACTIONS = (0.75, 0.50, 0.25)
CALIBRATION_STEPS = 100


class ConfigError(ValueError):
    """Scenario configuration is inconsistent or incomplete."""


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to reproduce one scenario run.

    ``dataset`` is either ``{"kind": "synthetic", ...}`` (see
    :func:`build_dataset`) or ``{"kind": "csv", "signals": ..., ...}``.
    ``freq_mode`` defaults to ``smallest`` for semi-supervised runs and
    ``dominant`` otherwise.
    """

    scenario: str
    dataset: dict
    sample_fraction: float = 0.5
    p: int = 1
    freq_mode: Optional[str] = None
    k: Optional[int] = None
    corruption: Optional[CorruptionSpec] = None
    train: TrainConfig = TrainConfig()
    repeats: int = 5
    model: str = "sggru"
    candidate_activation: str = "sigmoid"
    baseline_readout: bool = False
    mape_unit_conversion: object = None
    seed: int = 0
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}")
        if not 0 < self.sample_fraction <= 1:
            raise ConfigError("sample_fraction must lie in (0, 1]")
        if self.freq_mode not in (None, "smallest", "dominant"):
            raise ConfigError("freq_mode must be 'smallest' or 'dominant'")
        if self.repeats < 1:
            raise ConfigError("repeats must be positive")
        if self.scenario in ("noise", "missing"):
            if self.corruption is None or self.corruption.kind != self.scenario:
                raise ConfigError(f"{self.scenario} scenario needs a {self.scenario} corruption spec")
        elif self.corruption is not None:
            raise ConfigError(f"{self.scenario} scenario takes no corruption spec")
        if self.scenario == "semisupervised":
            if self.sample_fraction >= 1:
                raise ConfigError("semi-supervised runs need sample_fraction < 1")
            if self.freq_mode == "dominant":
                raise ConfigError("dominant frequencies would read hidden-node data in a semi-supervised run")
        if self.p != self.train.p:
            object.__setattr__(self, "train", replace(self.train, p=self.p))
        expected_loss = "semisupervised" if self.scenario == "semisupervised" else "supervised"
        if self.train.loss_mode != expected_loss:
            object.__setattr__(self, "train", replace(self.train, loss_mode=expected_loss))
        if self.train.seed != self.seed:
            object.__setattr__(self, "train", replace(self.train, seed=self.seed))
        UnitConversion.parse(self.mape_unit_conversion)

    @property
    def effective_freq_mode(self) -> str:
        if self.freq_mode:
            return self.freq_mode
        return "smallest" if self.scenario == "semisupervised" else "dominant"

    @property
    def repeat_count(self) -> int:
        return self.repeats if self.scenario in ("noise", "missing") else 1

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "dataset": dict(self.dataset),
            "sample_fraction": self.sample_fraction,
            "p": self.p,
            "freq_mode": self.freq_mode,
            "k": self.k,
            "corruption": None if self.corruption is None else vars(self.corruption).copy(),
            "train": self.train.to_dict(),
            "repeats": self.repeats,
            "model": self.model,
            "candidate_activation": self.candidate_activation,
            "baseline_readout": self.baseline_readout,
            "mape_unit_conversion": self.mape_unit_conversion,
            "seed": self.seed,
        }

    def content_hash(self) -> str:
        return hashlib.sha256(_canonical(self.to_dict()).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown scenario keys: {sorted(extra)}")
        for key in ("scenario", "dataset"):
            if key not in d:
                raise ConfigError(f"missing required key {key!r}")
        try:
            if isinstance(d.get("train"), dict):
                d["train"] = TrainConfig.from_dict(d["train"])
            if isinstance(d.get("corruption"), dict):
                d["corruption"] = CorruptionSpec(**d["corruption"])
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def load_config_file(path) -> dict:
    """Read a JSON or TOML mapping."""
    text = Path(path).read_bytes()
    if str(path).endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        try:
            return tomllib.loads(text.decode())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# --- datasets ------------------------------------------------------------------

def build_dataset(ref: dict) -> TimeSeriesDataset:
    """Materialise a dataset reference.

    Synthetic keys: ``n``, ``t``, ``k`` (band = K smallest frequencies) or
    ``freq_indices``, ``ar_coef``, ``innovation_std``, ``level``, ``snr_db``
    (null = noiseless), ``graph_neighbors``, ``seed``.
    CSV keys: ``signals``, ``adjacency``, ``meta``, ``graph_builder``,
    ``knn``, ``units``.
    """
    kind = ref.get("kind")
    if kind == "synthetic":
        n = int(ref["n"])
        seed = int(ref.get("seed", 0))
        freqs = ref.get("freq_indices")
        if freqs is None:
            freqs = list(range(int(ref.get("k", max(1, n // 6)))))
        snr = ref.get("snr_db")
        graph = random_geometric_graph(n, int(ref.get("graph_neighbors", 4)), seed)
        model = ARModel(float(ref.get("ar_coef", 0.9)), float(ref.get("innovation_std", 1.0)),
                        float(ref.get("level", 0.0)))
        return generate_synthetic(n, int(ref["t"]), freqs, model,
                                  math.inf if snr is None else float(snr), seed, graph)
    if kind == "csv":
        return load_dataset(ref["signals"], ref.get("adjacency"), ref.get("meta"),
                            ref.get("graph_builder", "raw"), int(ref.get("knn", 10)),
                            int(ref.get("rbf_window", 1000)), ref.get("units", ""))
    raise ConfigError(f"dataset kind must be 'synthetic' or 'csv', got {kind!r}")


def corrupt(dataset: TimeSeriesDataset, spec: Optional[CorruptionSpec], repeat: int):
    """Observed view for one repeat; the corruption seed advances with ``repeat``."""
    if spec is None:
        return fill_missing(dataset)
    spec_r = replace(spec, seed=spec.seed + repeat)
    if spec.kind == "noise":
        return inject_noise(dataset, spec_r)
    return fill_missing(inject_missing(dataset, spec_r))


# --- runs ----------------------------------------------------------------------

@dataclass
class RunArtifacts:
    model: object
    plan: object
    history_csv: str
    test_predictions: np.ndarray
    test_truth: np.ndarray
    test_index: np.ndarray


@dataclass
class ScenarioResult:
    """``report`` is deterministic given the config; ``timings`` is wall-clock."""

    report: dict
    timings: list
    artifacts: list = field(default_factory=list)


def _summary(runs: list) -> dict:
    out = {}
    for key in ("mae", "rmse", "mape"):
        vals = np.array([r["metrics"][key] for r in runs], dtype=float)
        out[key] = float(np.mean(vals))
        out[f"{key}_std"] = float(np.std(vals))
    for subset in ("known", "hidden"):
        if all(subset in r["metrics"]["subsets"] for r in runs):
            out[f"{subset}_mae"] = float(np.mean([r["metrics"]["subsets"][subset]["mae"] for r in runs]))
    return out


def run_scenario(config: ScenarioConfig, dataset: Optional[TimeSeriesDataset] = None,
                 log=None) -> ScenarioResult:
    """Run every repeat of ``config`` and assemble the report."""
    clean = dataset if dataset is not None else build_dataset(config.dataset)
    n = clean.n_nodes
    if config.scenario in ("noise", "missing"):
        m = n
    else:
        m = int(round(config.sample_fraction * n))
    k = config.k if config.k is not None else default_k(m)
    if not 1 <= k <= m:
        raise ConfigError(f"need 1 <= K <= M, got K={k}, M={m}")
    spectrum = graph_spectrum(clean.graph)
    conversion = UnitConversion.parse(config.mape_unit_conversion)
    runs, timings, artifacts = [], [], []
    plan = None
    for r in range(config.repeat_count):
        observed = corrupt(clean, config.corruption, r)
        if plan is None or config.effective_freq_mode == "dominant":
            freqs = choose_frequency_set(config.effective_freq_mode, spectrum, k=k,
                                         calibration_signals=observed.signals[:, :CALIBRATION_STEPS])
            if plan is None or list(plan.freq_indices) != freqs:
                plan = select_plan(spectrum, m, freqs)
        if config.model == "sggru":
            model = init_model(n, m, k, config.train.tau, config.p, plan, config.seed,
                               config.candidate_activation)
        else:
            model = init_baseline(n, m, config.train.tau, config.p, plan, config.seed,
                                  config.candidate_activation, config.baseline_readout)
        t0 = time.perf_counter()
        result, data = train(model, observed, plan, config.train, log)
        t1 = time.perf_counter()
        metrics = evaluate(model, data.test, plan, data.scaler, config.scenario, conversion)
        t2 = time.perf_counter()
        run = {
            "repeat": r,
            "metrics": metrics.to_dict(),
            "model_sha256": model.content_hash(),
            "plan_sha256": plan.content_hash(),
            "freq_indices": list(plan.freq_indices),
            "sv_min": plan.sv_min,
            "best_epoch": result.best_epoch,
            "stopped_epoch": result.stopped_epoch,
            "best_val_loss": result.best_val_loss,
            "windows": {"train": len(data.train), "val": len(data.val), "test": len(data.test)},
            "scale": data.scaler.scale,
        }
        if config.scenario == "missing":
            counts = observed.missing.sum(axis=0) if observed.missing is not None else np.zeros(1)
            run["mask_per_step"] = {"min": int(counts.min()), "max": int(counts.max()),
                                    "mean": float(counts.mean())}
        runs.append(run)
        timings.append({"repeat": r, "train_seconds": t1 - t0, "test_seconds": t2 - t1,
                        "epochs": result.stopped_epoch})
        artifacts.append(RunArtifacts(model, plan, result.history_csv(),
                                      predict(model, plan, data.test, data.scaler),
                                      data.test.labels, data.test.label_index))
    report = {
        "format": "sggru-report",
        "scenario": config.scenario,
        "model": config.model,
        "config": config.to_dict(),
        "config_sha256": config.content_hash(),
        "dims": {"n": n, "m": m, "k": k, "tau": config.train.tau, "p": config.p},
        "flops": estimate_flops(n, m, k, config.train.tau),
        "n_params": artifacts[-1].model.n_params,
        "sample_nodes": list(plan.sample_nodes),
        "plan_sha256": runs[0]["plan_sha256"],
        "model_sha256": runs[0]["model_sha256"],
        "sv_min": runs[0]["sv_min"],
        "runs": runs,
        "summary": _summary(runs),
    }
    return ScenarioResult(report, timings, artifacts)


def _check(config: ScenarioConfig, scenario: str) -> None:
    if config.scenario != scenario:
        raise ConfigError(f"expected a {scenario} config, got {config.scenario}")


def run_supervised(config: ScenarioConfig, dataset=None) -> ScenarioResult:
    """Sampled inputs, labels on all N nodes."""
    _check(config, "supervised")
    return run_scenario(config, dataset)


def run_semisupervised(config: ScenarioConfig, dataset=None) -> ScenarioResult:
    """Sampled inputs and sampled labels; hidden targets are interpolated."""
    _check(config, "semisupervised")
    return run_scenario(config, dataset)


def run_noise(config: ScenarioConfig, dataset=None) -> ScenarioResult:
    """All nodes observed through additive noise; clean labels; repeated over noise seeds."""
    _check(config, "noise")
    return run_scenario(config, dataset)


def run_missing(config: ScenarioConfig, dataset=None) -> ScenarioResult:
    """Random per-step missing inputs filled by 1-hop averaging; clean labels."""
    _check(config, "missing")
    return run_scenario(config, dataset)


def run_baseline_gru(config: ScenarioConfig, dataset=None) -> ScenarioResult:
    """The same scenario with a single vertex GRU and the plan's interpolator."""
    return run_scenario(replace(config, model="baseline"), dataset)


def run_sweep(config: ScenarioConfig, fractions=DEFAULT_FRACTIONS, dataset=None) -> dict:
    """One run per sample fraction, collected into a single table."""
    clean = dataset if dataset is not None else build_dataset(config.dataset)
    rows, reports = [], []
    for frac in fractions:
        res = run_scenario(replace(config, sample_fraction=float(frac)), clean)
        reports.append(res.report)
        s = res.report["summary"]
        rows.append({"sample_fraction": float(frac), "m": res.report["dims"]["m"],
                     "k": res.report["dims"]["k"], "mae": s["mae"], "rmse": s["rmse"],
                     "mape": s["mape"], "hidden_mae": s.get("hidden_mae"),
                     "known_mae": s.get("known_mae"), "sv_min": res.report["sv_min"],
                     "flops": res.report["flops"]})
    return {"format": "sggru-sweep", "scenario": config.scenario, "rows": rows, "reports": reports}


# --- output --------------------------------------------------------------------

def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def report_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "model", "repeat", "subset", "mae", "rmse", "mape"])
    for run in report["runs"]:
        m = run["metrics"]
        w.writerow([report["scenario"], report["model"], run["repeat"], "all",
                    repr(m["mae"]), repr(m["rmse"]), repr(m["mape"])])
        for name in sorted(m["subsets"]):
            s = m["subsets"][name]
            w.writerow([report["scenario"], report["model"], run["repeat"], name,
                        repr(s["mae"]), repr(s["rmse"]), repr(s["mape"])])
    return buf.getvalue()


def sweep_csv(sweep: dict) -> str:
    buf = io.StringIO()
    cols = ["sample_fraction", "m", "k", "mae", "rmse", "mape", "known_mae", "hidden_mae",
            "sv_min", "flops"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in sweep["rows"]:
        w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
    return buf.getvalue()


def write_plot_data(artifacts: RunArtifacts, directory) -> None:
    """One CSV per node with columns ``t,truth,prediction`` over the test windows."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for node in range(artifacts.test_truth.shape[1]):
        with open(d / f"node_{node:04d}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "truth", "prediction"])
            for t, y, yhat in zip(artifacts.test_index, artifacts.test_truth[:, node],
                                  artifacts.test_predictions[:, node]):
                w.writerow([int(t), repr(float(y)), repr(float(yhat))])


def write_result(result: ScenarioResult, out_dir, plot_data: bool = False) -> dict:
    """Write ``report.json``, ``report.csv``, ``timings.json``, histories, plan and checkpoints."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / "report.json").write_text(report_json(result.report))
    (d / "report.csv").write_text(report_csv(result.report))
    (d / "timings.json").write_text(json.dumps(result.timings, indent=2) + "\n")
    result.artifacts[0].plan.save(d / "plan.json")
    for r, art in enumerate(result.artifacts):
        (d / f"history_{r}.csv").write_text(art.history_csv)
        save_checkpoint(art.model, d / f"model_{r}.json")
        if plot_data:
            write_plot_data(art, d / "plot" / f"repeat_{r}")
    return {"report": str(d / "report.json")}


__all__ = [
    "SCENARIOS", "ScenarioConfig", "ScenarioResult", "ConfigError", "build_dataset", "corrupt",
    "run_scenario", "run_supervised", "run_semisupervised", "run_noise", "run_missing",
    "run_baseline_gru", "run_sweep", "report_json", "report_csv", "sweep_csv", "write_result",
    "write_plot_data", "load_config_file",
]
