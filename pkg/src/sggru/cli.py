"""Command-line interface.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import DataError, save_dataset
from .graph import (
    EigenError,
    Graph,
    GraphError,
    build_knn_graph,
    build_rbf_adjacency,
    cached_spectrum,
    load_adjacency_csv,
    load_node_meta_csv,
    save_adjacency_csv,
)
from .data import read_signals_csv
from .model import estimate_flops, load_checkpoint
from .nn import NumericalError
from .pipeline import PipelineError, UnitConversion, evaluate, prepare
from .sampling import SamplingError, SamplingPlan, choose_frequency_set, select_plan
from .scenarios import (
    ConfigError,
    ScenarioConfig,
    build_dataset,
    corrupt,
    load_config_file,
    report_json,
    run_scenario,
    run_sweep,
    sweep_csv,
    write_result,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON or TOML file with run settings")
    p.add_argument("--seed", type=_u64, help="override the configured seed")
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--plot-data", action="store_true",
                   help="also write per-node truth/prediction CSVs")
    return p


def _out(args) -> Path:
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _read_config(args) -> dict:
    return load_config_file(args.config) if args.config else {}


def _scenario_config(args) -> ScenarioConfig:
    if not args.config:
        raise ConfigError("this command needs --config")
    raw = _read_config(args)
    if args.seed is not None:
        raw["seed"] = args.seed
    return ScenarioConfig.from_dict(raw)


def _load_graph(path) -> Graph:
    return Graph(load_adjacency_csv(path))


# --- commands --------------------------------------------------------------------

def cmd_graph_build(args) -> int:
    cfg = _read_config(args)
    builder = args.builder or cfg.get("graph_builder", "knn")
    if builder == "knn":
        meta = args.meta or cfg.get("meta")
        if not meta:
            raise ConfigError("knn builder needs --meta")
        graph = build_knn_graph(load_node_meta_csv(meta), args.knn or int(cfg.get("knn", 10)))
    elif builder == "rbf":
        adj = args.adjacency or cfg.get("adjacency")
        sig = args.signals or cfg.get("signals")
        if not adj or not sig:
            raise ConfigError("rbf builder needs --adjacency and --signals")
        graph = build_rbf_adjacency(load_adjacency_csv(adj), read_signals_csv(sig),
                                    int(cfg.get("rbf_window", 1000)))
    else:
        raise ConfigError(f"unknown graph builder {builder!r}")
    path = _out(args) / "adjacency.csv"
    save_adjacency_csv(graph, path)
    print(f"wrote {path} ({graph.n_nodes} nodes)")
    return EXIT_OK


def cmd_spectrum_compute(args) -> int:
    graph = _load_graph(args.adjacency)
    path = _out(args) / "spectrum.npz"
    spec = cached_spectrum(graph, path)
    print(f"wrote {path}; smallest eigenvalues {(np.round(spec.eigenvalues[:5], 6) + 0.0).tolist()}")
    return EXIT_OK


def cmd_plan_select(args) -> int:
    graph = _load_graph(args.adjacency)
    out = _out(args)
    spec = cached_spectrum(graph, out / "spectrum.npz")
    n = graph.n_nodes
    m = args.m if args.m is not None else int(round(args.fraction * n))
    calib = None
    if args.freq_mode == "dominant":
        if not args.signals:
            raise ConfigError("dominant frequency mode needs --signals")
        calib = read_signals_csv(args.signals)[:, :100]
    freqs = choose_frequency_set(args.freq_mode, spec, k=args.k, m=m, calibration_signals=calib)
    plan = select_plan(spec, m, freqs)
    plan.save(out / "plan.json")
    print(json.dumps({"m": m, "k": len(freqs), "sv_min": plan.sv_min,
                      "sample_nodes": list(plan.sample_nodes)}))
    return EXIT_OK


def cmd_synth_generate(args) -> int:
    raw = _read_config(args)
    ref = dict(raw.get("dataset", raw))
    ref["kind"] = "synthetic"
    for key in ("n", "t", "k", "snr_db", "ar_coef", "level"):
        value = getattr(args, key)
        if value is not None:
            ref[key] = value
    if args.seed is not None:
        ref["seed"] = args.seed
    if "n" not in ref or "t" not in ref:
        raise ConfigError("synthetic data need n and t")
    ds = build_dataset(ref)
    paths = save_dataset(ds, _out(args))
    print(json.dumps(paths))
    return EXIT_OK


def cmd_train(args) -> int:
    config = _scenario_config(args)
    config = replace(config, repeats=1)
    result = run_scenario(config)
    write_result(result, _out(args), args.plot_data)
    print(report_json(result.report["summary"]), end="")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = _scenario_config(args)
    out = _out(args)
    plan = SamplingPlan.load(args.plan)
    model, _ = load_checkpoint(args.checkpoint, plan)
    observed = corrupt(build_dataset(config.dataset), config.corruption, args.repeat)
    data = prepare(observed, plan, config.train)
    report = evaluate(model, data.test, plan, data.scaler, config.scenario,
                      UnitConversion.parse(config.mape_unit_conversion))
    (out / "metrics.json").write_text(report.to_json() + "\n")
    (out / "metrics.csv").write_text(report.to_csv())
    print(report.to_json())
    return EXIT_OK


def cmd_scenario_run(args) -> int:
    config = _scenario_config(args)
    out = _out(args)
    if args.sweep:
        fractions = [float(f) for f in args.sweep.split(",")]
        sweep = run_sweep(config, fractions)
        (out / "sweep.json").write_text(report_json(sweep))
        (out / "sweep.csv").write_text(sweep_csv(sweep))
        print(sweep_csv(sweep), end="")
        return EXIT_OK
    result = run_scenario(config)
    write_result(result, out, args.plot_data)
    print(report_json(result.report["summary"]), end="")
    return EXIT_OK


def cmd_flops(args) -> int:
    k = args.k if args.k is not None else args.m // 3
    print(estimate_flops(args.n, args.m, k, args.tau))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    g = _global_flags()
    parser = argparse.ArgumentParser(prog="sggru", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    graph = sub.add_parser("graph", help="graph construction").add_subparsers(dest="action", required=True)
    p = graph.add_parser("build", parents=[g], help="weighted adjacency from metadata or a binary graph")
    p.add_argument("--builder", choices=["knn", "rbf"])
    p.add_argument("--meta", help="node metadata CSV (id,lat,lon,alt)")
    p.add_argument("--knn", type=int, help="neighbours per node (default 10)")
    p.add_argument("--adjacency", help="binary adjacency CSV for the rbf builder")
    p.add_argument("--signals", help="signals CSV for the rbf builder")
    p.set_defaults(func=cmd_graph_build)

    spec = sub.add_parser("spectrum", help="Laplacian eigendecomposition").add_subparsers(dest="action", required=True)
    p = spec.add_parser("compute", parents=[g])
    p.add_argument("--adjacency", required=True)
    p.set_defaults(func=cmd_spectrum_compute)

    plan = sub.add_parser("plan", help="sampling plans").add_subparsers(dest="action", required=True)
    p = plan.add_parser("select", parents=[g], help="greedy E-optimal sampling set")
    p.add_argument("--adjacency", required=True)
    p.add_argument("--m", type=int, help="number of sampled nodes")
    p.add_argument("--fraction", type=float, default=0.5, help="M / N when --m is absent")
    p.add_argument("--k", type=int, help="number of frequencies (default M // 3)")
    p.add_argument("--freq-mode", choices=["smallest", "dominant"], default="smallest")
    p.add_argument("--signals", help="signals CSV for the dominant mode")
    p.set_defaults(func=cmd_plan_select)

    synth = sub.add_parser("synth", help="synthetic data").add_subparsers(dest="action", required=True)
    p = synth.add_parser("generate", parents=[g])
    p.add_argument("--n", type=int)
    p.add_argument("--t", type=int)
    p.add_argument("--k", type=int, help="band = K smallest frequencies")
    p.add_argument("--snr-db", type=float)
    p.add_argument("--ar-coef", type=float)
    p.add_argument("--level", type=float)
    p.set_defaults(func=cmd_synth_generate)

    p = sub.add_parser("train", parents=[g], help="train one model from a scenario config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[g], help="score a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--repeat", type=int, default=0, help="corruption repeat to evaluate on")
    p.set_defaults(func=cmd_evaluate)

    scen = sub.add_parser("scenario", help="full scenario runs").add_subparsers(dest="action", required=True)
    p = scen.add_parser("run", parents=[g])
    p.add_argument("--sweep", help="comma-separated sample fractions, e.g. 0.75,0.5,0.25")
    p.set_defaults(func=cmd_scenario_run)

    p = sub.add_parser("flops", parents=[g], help="per-iteration cost estimate")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--tau", type=int, default=10)
    p.set_defaults(func=cmd_flops)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (NumericalError, FloatingPointError, EigenError, SamplingError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DataError, GraphError, PipelineError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
