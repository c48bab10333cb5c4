"""Time the compiled kernels against the numpy fallback.

Run from the repository root:

    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --sizes 50,100 --repeat 3 --json out.json

Each kernel is run on the same inputs with every available backend; the
table shows the best wall-clock time out of ``--repeat`` runs and the
speedup of the compiled backend over the fallback.
"""

import argparse
import json
import sys
import time

import numpy as np

from sggru._kernels import SIGMOID, available_backends


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def jacobi_case(n, rng):
    a = rng.normal(size=(n, n))
    a = a + a.T
    tol = 1e-12 * np.linalg.norm(a)
    return lambda k: k.jacobi_sweeps(a.copy(), tol, 100)


def gru_cases(d, rng, steps=10, batch=40):
    x = rng.normal(size=(steps, batch, d))
    h0 = np.zeros((batch, d))
    mats = [rng.normal(scale=d ** -0.5, size=(d, d)) for _ in range(6)]
    w_q, v_q, w_r, v_r, w_c, v_c = mats
    b = [np.zeros(d) for _ in range(3)]
    args = (w_q, v_q, b[0], w_r, v_r, b[1], w_c, v_c, b[2], SIGMOID)
    fwd = available_backends()["python"].gru_forward(x, h0, *args)
    dh_out = rng.normal(size=(steps, batch, d))

    def forward(k):
        return k.gru_forward(x, h0, *args)

    def backward(k):
        return k.gru_backward(x, *fwd, dh_out, w_q, v_q, w_r, v_r, w_c, v_c, SIGMOID)

    return forward, backward


def run(sizes, repeat, seed=0):
    backends = available_backends()
    rows = []
    for n in sizes:
        rng = np.random.default_rng(seed)
        cases = {"jacobi": jacobi_case(n, rng)}
        cases["gru_forward"], cases["gru_backward"] = gru_cases(n, rng)
        for name, case in cases.items():
            row = {"kernel": name, "size": n}
            for label, module in backends.items():
                row[label] = best_time(lambda: case(module), repeat)
            if "cython" in row:
                row["speedup"] = row["python"] / row["cython"]
            rows.append(row)
    return rows


def format_table(rows):
    lines = [f"{'kernel':<14}{'size':>6}{'python [s]':>14}{'cython [s]':>14}{'speedup':>10}"]
    for r in rows:
        cy = f"{r['cython']:14.5f}" if "cython" in r else f"{'n/a':>14}"
        sp = f"{r['speedup']:10.1f}" if "speedup" in r else f"{'':>10}"
        lines.append(f"{r['kernel']:<14}{r['size']:>6}{r['python']:14.5f}{cy}{sp}")
    return "\n".join(lines)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="25,50,100",
                        help="comma-separated matrix / state sizes (default 25,50,100)")
    parser.add_argument("--repeat", type=int, default=3, help="runs per measurement")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--json", help="also write the rows to this file")
    args = parser.parse_args(argv)
    sizes = [int(s) for s in args.sizes.split(",")]
    rows = run(sizes, args.repeat, args.seed)
    print(format_table(rows))
    if "cython" not in available_backends():
        print("compiled extension not built; only the fallback was timed", file=sys.stderr)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
