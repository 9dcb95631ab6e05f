"""Compiled versus pure-Python kernels on identical inputs.

    python3 benchmarks/bench_kernels.py [--traces 200] [--repeat 3]

Each row is the best of ``--repeat`` wall-clock runs.  The last column is the
largest absolute difference between the two backends' outputs.
"""

import argparse
import time

import numpy as np

from ehwater import kernels
from ehwater.processes import RngStream, paper_scenario, sample_trace


def traces(n, horizon, seed):
    model = paper_scenario("main").with_horizon(horizon)
    out = []
    for k in range(n):
        tr = sample_trace(model, RngStream(seed, k))
        out.append((float(tr.harvests[0]), float(tr.arrivals[0]), tr.harvests, tr.arrivals,
                    tr.gains))
    return out


def cases(n_traces, seed):
    data = traces(n_traces, 50, seed)
    rng = np.random.default_rng(seed)
    hist = [1.0 / rng.choice([12.0, 30.0], int(k)) for k in rng.integers(1, 60, 2000)]
    heur = [(float(rng.uniform(0, 200)), float(rng.uniform(1, 1e5)), float(rng.uniform(10, 60)),
             float(rng.uniform(1e3, 1e5)), h) for h in hist]
    static = [(rng.uniform(0, 100, 2000), np.where(rng.random((2000, 99)) < 0.45, 180.0, 0.0))]

    def log(mod):
        return [mod.solve_log_trace(*t)[0] for t in data]

    def general(mod):
        return [mod.solve_general_trace(*t, "log")[0] for t in data]

    def heuristic(mod):
        return [np.array([mod.heuristic_water(*a)[0]]) for a in heur]

    def static_power(mod):
        return [mod.static_offline_power(e, h) for e, h in static]

    return [(f"offline log, {n_traces} traces x 50 slots", log),
            (f"offline general, {n_traces} traces x 50 slots", general),
            ("heuristic water, 2000 decisions", heuristic),
            ("static offline power, 2000 x 99", static_power)]


def best_of(fn, mod, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(mod)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--traces", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args(argv)
    mods = kernels.available_backends()
    if "cython" not in mods:
        print("compiled extension not built; only the Python backend is available")
    print(f"{'kernel':<42}{'python s':>10}{'cython s':>10}{'speedup':>9}{'max diff':>11}")
    for name, fn in cases(args.traces, args.seed):
        tp, op = best_of(fn, mods["python"], args.repeat)
        if "cython" in mods:
            tc, oc = best_of(fn, mods["cython"], args.repeat)
            diff = max(float(np.max(np.abs(a - b))) for a, b in zip(op, oc))
            print(f"{name:<42}{tp:>10.3f}{tc:>10.4f}{tp / tc:>8.1f}x{diff:>11.1e}")
        else:
            print(f"{name:<42}{tp:>10.3f}{'-':>10}{'-':>9}{'-':>11}")


if __name__ == "__main__":
    main()
