import numpy as np
import pytest

from ehwater import kernels
from ehwater.core import Trace

BACKENDS = sorted(kernels.available_backends())


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Route the kernel entry points through one backend."""
    mod = kernels.available_backends()[request.param]
    for name in ("solve_log_trace", "solve_general_trace", "heuristic_water",
                 "static_offline_power"):
        monkeypatch.setattr(kernels, name, getattr(mod, name))
    return request.param


def random_trace(rng, n_max=50, n_min=1):
    n = int(rng.integers(n_min, n_max + 1))
    h = rng.choice([0.0, rng.uniform(1, 60)], n, p=[0.5, 0.5])
    b = rng.choice([0.0, rng.uniform(0.5, 30)], n, p=[0.6, 0.4])
    g = rng.choice([0.2, 1.0, 12.0, 30.0], n)
    return Trace(h, b, g)


def random_buffers(rng, trace):
    e1 = float(trace.harvests[0]) + rng.uniform(0, 20)
    b1 = np.inf if rng.random() < 0.25 else float(trace.arrivals[0]) + rng.uniform(0, 10)
    return e1, b1


# ------------------------------------------------------------- acceptance

ACCEPTANCE = {
    1: "log and general solvers agree",
    2: "offline beats brute-force grid search",
    3: "offline schedule structure",
    4: "offline power distribution",
    5: "outage root analytics",
    6: "efficiency bound on enumerable toys",
    7: "static fill bound suite",
    8: "DP dominance and deterministic collapse",
    9: "sweep ordering, efficiency and saturation",
    10: "causality and reproducibility",
}
_verdicts = {}


def record(key, ok, detail):
    """Log one acceptance sub-check; a criterion passes when all of its checks do."""
    _verdicts.setdefault(key, []).append((bool(ok), detail))
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance")
    for key, title in ACCEPTANCE.items():
        checks = _verdicts.get(key)
        if not checks:
            terminalreporter.write_line(f"NOT RUN  A{key:<2} {title}")
            continue
        verdict = "PASS" if all(ok for ok, _ in checks) else "FAIL"
        terminalreporter.write_line(f"{verdict:<8} A{key:<2} {title}")
        for ok, detail in checks:
            terminalreporter.write_line(f"           {'ok ' if ok else 'BAD'} {detail}")
