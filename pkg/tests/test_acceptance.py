"""Acceptance gate: one test per headline criterion.

Run ``pytest tests/test_acceptance.py -v -s``; the terminal summary lists a
PASS/FAIL line per criterion.
"""

import itertools
import json
import math
import time

import numpy as np
import pytest

from sggru.data import CorruptionSpec, TimeSeriesDataset, generate_synthetic
from sggru.graph import eigh, gft, graph_spectrum, igft, random_geometric_graph
from sggru.model import estimate_flops, init_model
from sggru.nn import (
    DenseParams,
    GruParams,
    dense_backward,
    dense_forward,
    gru_cell_backward,
    gru_cell_forward,
    gru_sequence_backward,
    gru_sequence_forward,
    loss_semisupervised,
    loss_supervised,
)
from sggru.pipeline import TrainConfig, make_windows, split_chronological, split_sizes, train
from sggru.sampling import make_plan, select_plan, select_sampling_set_greedy
from sggru.scenarios import ScenarioConfig, report_json, run_baseline_gru, run_scenario, write_result


def _line(name, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


def _fd(fn, array, h=1e-5):
    grad = np.zeros_like(array)
    for idx in np.ndindex(array.shape):
        orig = array[idx]
        array[idx] = orig + h
        fp = fn()
        array[idx] = orig - h
        fm = fn()
        array[idx] = orig
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def _rel(a, n):
    # Denominator floored at 1e-6: with h = 1e-5 the central difference of an
    # O(1) loss carries ~2e-11 of roundoff, i.e. 1e-4 relative on 1e-7 entries.
    a, n = np.asarray(a), np.asarray(n)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)))


def _random_instance(rng, n_max=30, k_max=8):
    n = int(rng.integers(4, n_max + 1))
    k = int(rng.integers(1, min(k_max, n) + 1))
    m = int(rng.integers(k, n + 1))
    graph = random_geometric_graph(n, k=int(rng.integers(2, 6)), seed=int(rng.integers(2 ** 31)))
    spec = graph_spectrum(graph)
    freqs = sorted(rng.choice(n, size=k, replace=False).tolist())
    nodes = select_sampling_set_greedy(spec, freqs, m)
    return spec, make_plan(spec, nodes, freqs)


@pytest.mark.criterion("perfect reconstruction of bandlimited signals (1000 trials, < 1e-8, < 10 s)")
def test_perfect_reconstruction():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        spec, plan = _random_instance(rng)
        x = plan.basis @ rng.normal(size=plan.n_freqs)
        worst = max(worst, float(np.max(np.abs(plan.interpolate(plan.sample(x)) - x))))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-8 and elapsed < 10
    _line("perfect reconstruction", ok, f"max error {worst:.2e}, {elapsed:.2f} s")
    assert worst < 1e-8
    assert elapsed < 10


@pytest.mark.criterion("reconstruction error bound never violated (1000 trials, slack 1e-9, < 10 s)")
def test_error_bound():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst_gap = -math.inf
    for trial in range(1000):
        spec, plan = _random_instance(rng)
        n = plan.n_nodes
        off = [i for i in range(n) if i not in plan.freq_indices]
        xb = plan.basis @ rng.normal(size=plan.n_freqs)
        if not off:
            eta = np.zeros(n)
        elif trial % 4 == 0:
            # residual concentrated on the sampled nodes, the adversarial direction
            u_off = spec.eigenvectors[:, off]
            target = np.zeros(n)
            target[list(plan.sample_nodes)] = rng.normal(size=plan.n_samples)
            eta = u_off @ (u_off.T @ target)
        else:
            eta = spec.eigenvectors[:, off] @ rng.normal(size=len(off))
        eta *= rng.uniform(1e-3, 1.0)
        x = xb + eta
        err = float(np.linalg.norm(plan.interpolate(plan.sample(x)) - x))
        bound = float(np.linalg.norm(eta)) / plan.sv_min
        worst_gap = max(worst_gap, err - bound)
    elapsed = time.perf_counter() - t0
    ok = worst_gap <= 1e-9 and elapsed < 10
    _line("error bound", ok, f"max(err - bound) {worst_gap:.2e}, {elapsed:.2f} s")
    assert worst_gap <= 1e-9
    assert elapsed < 10


@pytest.mark.criterion("spectral suite: GFT at 1e-10, eigendecomposition at 1e-8 up to N=100")
def test_spectral_suite():
    rng = np.random.default_rng(99)
    worst_gft = 0.0
    graphs = [random_geometric_graph(int(n), seed=int(s)) for n, s in zip(rng.integers(5, 60, 10), range(10))]
    spectra = [graph_spectrum(g) for g in graphs]
    for spec in spectra:
        u = spec.eigenvectors
        worst_gft = max(worst_gft, float(np.max(np.abs(u.T @ u - np.eye(len(u))))))
    for i in range(1000):
        spec = spectra[i % len(spectra)]
        x = rng.normal(size=spec.n_nodes) * rng.uniform(0.1, 10)
        xh = gft(x, spec)
        worst_gft = max(worst_gft, float(np.max(np.abs(igft(xh, spec) - x))),
                        abs(float(xh @ xh - x @ x)) / max(1.0, float(x @ x)))
    worst_eig = 0.0
    for n in (2, 5, 10, 25, 50, 75, 100):
        a = rng.normal(size=(n, n))
        a = (a + a.T) / 2
        w, v = eigh(a)
        worst_eig = max(worst_eig, float(np.max(np.abs(v @ np.diag(w) @ v.T - a))),
                        float(np.max(np.abs(v.T @ v - np.eye(n)))))
    ok = worst_gft < 1e-10 and worst_eig < 1e-8
    _line("spectral suite", ok, f"GFT {worst_gft:.2e}, eig {worst_eig:.2e}")
    assert worst_gft < 1e-10
    assert worst_eig < 1e-8


def _gradient_errors(seed):
    rng = np.random.default_rng(seed)
    act = "sigmoid" if seed % 2 == 0 else "tanh"
    errs = {}
    d, b = 4, 3
    p = GruParams.init(d, rng, act)
    x = rng.normal(size=(b, d))
    h = rng.uniform(-1, 1, size=(b, d))
    w = rng.normal(size=(b, d))
    out, tr = gru_cell_forward(x, h, p)
    grads, dx, dh = gru_cell_backward(tr, w)
    f = lambda: float(np.sum(w * gru_cell_forward(x, h, p)[0]))
    errs["gru cell"] = max([_rel(grads[k], _fd(f, a)) for k, a in p.arrays().items()]
                           + [_rel(dx, _fd(f, x)), _rel(dh, _fd(f, h))])
    xs = rng.normal(size=(5, b, d))
    ws = rng.normal(size=(5, b, d))
    _, tr = gru_sequence_forward(xs, p)
    grads, dxs, _ = gru_sequence_backward(tr, ws)
    f = lambda: float(np.sum(ws * gru_sequence_forward(xs, p)[0]))
    errs["gru sequence"] = max([_rel(grads[k], _fd(f, a)) for k, a in p.arrays().items()]
                               + [_rel(dxs, _fd(f, xs))])
    dp = DenseParams.init(3, 5, rng)
    xin = rng.normal(size=(b, 5))
    wd = rng.normal(size=(b, 3))
    dg, ddx = dense_backward(xin, dp, wd)
    f = lambda: float(np.sum(wd * dense_forward(xin, dp)))
    errs["dense"] = max(_rel(dg["weight"], _fd(f, dp.weight)), _rel(dg["bias"], _fd(f, dp.bias)),
                        _rel(ddx, _fd(f, xin)))
    n, m, k, tau = 10, 6, 2, 3
    graph = random_geometric_graph(n, seed=seed)
    spec = graph_spectrum(graph)
    plan = select_plan(spec, m, list(range(k)))
    pred = rng.normal(size=(b, n))
    lab = rng.normal(size=(b, n))
    _, g = loss_supervised(pred, lab)
    errs["supervised loss"] = _rel(g, _fd(lambda: loss_supervised(pred, lab)[0], pred))
    slab = rng.normal(size=(b, m))
    _, g = loss_semisupervised(pred, slab, plan)
    errs["semi-supervised loss"] = _rel(g, _fd(lambda: loss_semisupervised(pred, slab, plan)[0], pred))
    model = init_model(n, m, k, tau=tau, plan=plan, seed=seed, candidate_activation=act)
    win = rng.normal(size=(b, tau, m))
    yp, trace = model.forward(win)
    _, g = loss_supervised(yp, lab)
    grads = model.backward(trace, g)
    f = lambda: loss_supervised(model.forward(win)[0], lab)[0]
    errs["SG-GRU"] = max(_rel(grads[name], _fd(f, arr)) for name, arr in model.parameters().items())
    return errs


@pytest.mark.criterion("gradient suite: finite differences vs analytic < 1e-4 over 20 seeds (< 60 s)")
def test_gradient_suite():
    t0 = time.perf_counter()
    worst = {}
    for seed in range(20):
        for key, val in _gradient_errors(seed).items():
            worst[key] = max(worst.get(key, 0.0), val)
    elapsed = time.perf_counter() - t0
    overall = max(worst.values())
    ok = overall < 1e-4 and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    _line("gradient suite", ok, f"{detail}; {elapsed:.1f} s")
    assert overall < 1e-4
    assert elapsed < 60


def _sigma(v):
    return 1.0 / (1.0 + math.exp(-v))


def _scalar_gru(seq, p):
    """Unvectorised GRU over a list of input vectors, from zero state."""
    d = p.dim
    act = _sigma if p.candidate_activation == "sigmoid" else math.tanh
    h = [0.0] * d
    for x in seq:
        q = [_sigma(sum(p.w_q[i][j] * x[j] for j in range(d)) + sum(p.v_q[i][j] * h[j] for j in range(d)) + p.b_q[i])
             for i in range(d)]
        r = [_sigma(sum(p.w_r[i][j] * x[j] for j in range(d)) + sum(p.v_r[i][j] * h[j] for j in range(d)) + p.b_r[i])
             for i in range(d)]
        c = [act(sum(p.w_c[i][j] * x[j] for j in range(d))
                 + sum(p.v_c[i][j] * h[j] * r[j] for j in range(d)) + p.b_c[i]) for i in range(d)]
        h = [q[i] * c[i] + (1 - q[i]) * h[i] for i in range(d)]
    return h


def _scalar_sggru(model, window):
    plan = model.plan
    n, m, k = model.dims.n, model.dims.m, model.dims.k
    u_sf = plan.basis[list(plan.sample_nodes), :]
    seq = [list(row) for row in window]
    spec_seq = [[sum(u_sf[j][f] * row[j] for j in range(m)) for f in range(k)] for row in seq]
    y_s = _scalar_gru(seq, model.gru)
    z_f = _scalar_gru(spec_seq, model.sgru)
    phi, phi_hat = plan.interpolator, plan.spectral_interpolator
    y = [sum(phi[i][j] * y_s[j] for j in range(m)) for i in range(n)]
    z = [sum(phi_hat[i][f] * z_f[f] for f in range(k)) for i in range(n)]
    stacked = y + z
    w, b = model.fusion.weight, model.fusion.bias
    return [sum(w[i][j] * stacked[j] for j in range(2 * n)) + b[i] for i in range(n)]


@pytest.mark.criterion("oracle equivalence: forward pass vs scalar-loop evaluation (50 instances, 1e-12)")
def test_oracle_equivalence():
    rng = np.random.default_rng(31)
    worst = 0.0
    for i in range(50):
        n = int(rng.integers(3, 11))
        m = int(rng.integers(1, n + 1))
        k = int(rng.integers(1, m + 1))
        tau = int(rng.integers(1, 5))
        spec = graph_spectrum(random_geometric_graph(n, seed=i))
        plan = select_plan(spec, m, sorted(rng.choice(n, size=k, replace=False).tolist()))
        model = init_model(n, m, k, tau=tau, plan=plan, seed=i,
                           candidate_activation="sigmoid" if i % 2 else "tanh")
        window = rng.normal(size=(tau, m))
        fast, _ = model.forward(window)
        slow = np.array(_scalar_sggru(model, window))
        worst = max(worst, float(np.max(np.abs(fast - slow))))
    ok = worst < 1e-12
    _line("oracle equivalence", ok, f"max abs difference {worst:.2e}")
    assert worst < 1e-12


@pytest.mark.criterion("greedy sampling reaches >= 0.9 of the exhaustive optimum (N=8, K=2, M=3)")
def test_greedy_vs_exhaustive():
    ratios = []
    for seed in range(5):
        spec = graph_spectrum(random_geometric_graph(8, k=3, seed=100 + seed))
        u = spec.eigenvectors[:, :2]
        best = max(np.linalg.svd(u[list(s)], compute_uv=False)[-1]
                   for s in itertools.combinations(range(8), 3))
        greedy = select_sampling_set_greedy(spec, [0, 1], 3)
        ratios.append(np.linalg.svd(u[greedy], compute_uv=False)[-1] / best)
    ok = min(ratios) >= 0.9
    _line("greedy vs exhaustive", ok, "ratios " + ", ".join(f"{r:.3f}" for r in ratios))
    assert min(ratios) >= 0.9


@pytest.mark.criterion("learning sanity: SG-GRU hidden-node MAE below GRU+interpolator baseline in >= 4/5 seeds (< 5 min)")
def test_learning_sanity():
    t0 = time.perf_counter()
    wins, pairs = 0, []
    for seed in range(5):
        ds = {"kind": "synthetic", "n": 20, "t": 500, "k": 3, "ar_coef": 0.9, "snr_db": 20.0,
              "seed": seed}
        cfg = ScenarioConfig("semisupervised", ds, sample_fraction=0.5, seed=seed)
        ours = run_scenario(cfg).report["summary"]["hidden_mae"]
        base = run_baseline_gru(cfg).report["summary"]["hidden_mae"]
        pairs.append((ours, base))
        wins += ours < base
    elapsed = time.perf_counter() - t0
    ok = wins >= 4 and elapsed < 300
    detail = "; ".join(f"{a:.3f} vs {b:.3f}" for a, b in pairs)
    _line("learning sanity", ok, f"{wins}/5 wins ({detail}); {elapsed:.1f} s")
    assert wins >= 4
    assert elapsed < 300


@pytest.mark.criterion("flops estimate matches the cost expression on 100 random tuples")
def test_flops_formula():
    rng = np.random.default_rng(5)
    for _ in range(100):
        n = int(rng.integers(1, 2000))
        m = int(rng.integers(1, n + 1))
        k = int(rng.integers(1, m + 1))
        tau = int(rng.integers(1, 50))
        direct = k * m + 6 * tau * (m ** 2 + k ** 2) + n * (k + m) + 2 * n ** 2
        assert estimate_flops(n, m, k, tau) == direct
    assert estimate_flops(12, 9, 3, 2) == 1539
    _line("flops formula", True, "100 tuples exact")


DETERMINISM_CASES = {
    "supervised": dict(scenario="supervised", sample_fraction=0.5),
    "semisupervised": dict(scenario="semisupervised", sample_fraction=0.5),
    "noise": dict(scenario="noise", corruption=CorruptionSpec("noise", noise_ratio=0.1), repeats=2),
    "missing": dict(scenario="missing", corruption=CorruptionSpec("missing", missing_fraction=0.1),
                    repeats=2),
}


@pytest.mark.criterion("determinism: identical config and seed give byte-identical reports")
@pytest.mark.parametrize("name", sorted(DETERMINISM_CASES))
def test_determinism(name, tmp_path):
    ds = {"kind": "synthetic", "n": 12, "t": 120, "k": 2, "snr_db": 20.0, "seed": 3}
    cfg = ScenarioConfig(dataset=ds, train=TrainConfig(max_epochs=4, patience=2, lr0=1e-3), seed=11,
                         **DETERMINISM_CASES[name])
    blobs = []
    for run in range(2):
        res = run_scenario(ScenarioConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))))
        write_result(res, tmp_path / str(run))
        blobs.append({f: (tmp_path / str(run) / f).read_bytes()
                      for f in ("report.json", "report.csv", "history_0.csv", "model_0.json", "plan.json")})
        blobs[-1]["text"] = report_json(res.report).encode()
    ok = blobs[0] == blobs[1]
    _line(f"determinism ({name})", ok, "reports byte-identical" if ok else "reports differ")
    assert ok


@pytest.mark.criterion("protocol conformance: 70/20/10 split, tau=10, batch 40, lr halves at 10/20, patience 5")
class TestProtocol:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.tau, cfg.batch_size, cfg.lr0, cfg.max_epochs, cfg.patience) == (10, 40, 1e-4, 100, 5)
        assert cfg.split_fractions == (0.70, 0.20, 0.10)
        assert (cfg.decay, cfg.decay_every) == (0.5, 10)

    def test_split_70_20_10(self):
        assert split_sizes(100, (0.7, 0.2, 0.1)) == (70, 20, 10)
        assert split_sizes(10, (0.7, 0.2, 0.1)) == (7, 2, 1)

    def test_windows_use_tau_10(self):
        ds = TimeSeriesDataset(np.arange(6 * 111, dtype=float).reshape(6, 111), random_geometric_graph(6, seed=0))
        w = make_windows(ds, TrainConfig().tau, 1)
        assert len(w) == 101 and w.inputs.shape[1] == 10
        tr, va, te = split_chronological(w)
        assert (len(tr), len(va), len(te)) == (71, 20, 10)

    def test_batch_40_lr_schedule_and_patience(self):
        ds = generate_synthetic(6, 160, [0, 1], seed=1)
        spec = graph_spectrum(ds.graph)
        plan = select_plan(spec, 6, [0, 1])
        model = init_model(6, 6, 2, plan=plan, seed=0)
        cfg = TrainConfig(max_epochs=22, patience=22, lr0=1e-3)
        res, data = train(model, ds, plan, cfg)
        n_train = len(data.train)
        assert n_train == 150 - 30 - 15
        # one update per batch of 40 (last batch short): ceil(105 / 40) = 3 per epoch
        assert model.version == 22 * math.ceil(n_train / 40) + 1  # +1 for the best-state restore
        lrs = [r.lr for r in res.history]
        assert lrs[:10] == [1e-3] * 10
        assert lrs[10:20] == [5e-4] * 10
        assert lrs[20:] == [2.5e-4] * 2
        # a frozen model plateaus from epoch 1 and must stop at epoch 6
        frozen = init_model(6, 6, 2, plan=plan, seed=0)
        res2, _ = train(frozen, ds, plan, TrainConfig(lr0=1e-300))
        assert res2.stopped_epoch == 6
        assert [r.epoch for r in res2.history] == [1, 2, 3, 4, 5, 6]
        _line("protocol conformance", True, "split, tau, batch, schedule and patience pinned")
