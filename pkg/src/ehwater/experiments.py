"""Experiment configuration, batch runners and deterministic CSV output.

All randomness derives from the config seed:

* replicate ``k`` of horizon ``N`` uses ``RngStream(seed).child(N, k)``;
* its trace comes from ``.child(0)`` and policy ``i`` gets ``.child(1, i)``;
* fill-sweep point ``i`` uses ``RngStream(seed, 1).child(i)``;
* the CDF sample uses ``RngStream(seed, 2)``.

Results never depend on the worker count because every replicate owns its
stream and the merge is ordered.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from ._version import __version__
from .analysis import (
    StaticSample,
    asymptotic_cdf,
    fill_lower_bound,
    finite_horizon_cdf,
    max_fill_lower_bounds,
    mc_cdf,
    ratio_of_means,
)
from .core import BufferState, Trace, log_rate, natural_log_rate, sqrt_rate
from .errors import ConfigError, InvalidArgumentError
from .offline import solve_offline, water_bounds_general, water_bounds_log
from .online import (
    DpPolicy,
    HeuristicPolicy,
    MeanOfflinePolicy,
    PowerHalvingPolicy,
    ZeroPolicy,
    dp_solve,
    simulate_policy,
)
from .processes import (
    Bernoulli,
    Constant,
    RngStream,
    ScenarioModel,
    paper_scenario,
    sample_trace,
)

POLICY_NAMES = ("offline", "heuristic", "power-halving", "mean-offline", "zero", "dp")
ANALYSES = ("fill_bounds", "cdf", "profiles")
RATES = {"log": log_rate, "ln": natural_log_rate, "sqrt": sqrt_rate}


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class PolicySpec:
    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in POLICY_NAMES:
            raise ConfigError(
                f"unknown policy {self.name!r}; valid names: {', '.join(POLICY_NAMES)}")
        if not isinstance(self.params, dict):
            raise ConfigError(f"params of policy {self.name!r} must be an object")

    def to_dict(self) -> dict:
        return {"name": self.name, "params": dict(self.params)}


def _policy_spec(item) -> PolicySpec:
    if isinstance(item, PolicySpec):
        return item
    if isinstance(item, str):
        return PolicySpec(item)
    if isinstance(item, dict) and "name" in item:
        extra = set(item) - {"name", "params"}
        if extra:
            raise ConfigError(f"unexpected policy keys: {sorted(extra)}")
        return PolicySpec(item["name"], dict(item.get("params", {})))
    raise ConfigError(f"malformed policy entry: {item!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a scenario swept over horizons for several policies.

    ``scenario`` is a named scenario or a :class:`ScenarioModel`.  Entries of
    ``analysis`` are ``false``/``true`` or an object of parameters.
    """

    scenario: Union[str, ScenarioModel] = "main"
    policies: tuple = ("offline", "heuristic", "power-halving")
    horizons: tuple = (25, 50, 100)
    replicates: int = 100
    seed: int = 1
    output_dir: str = "results"
    analysis: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "policies", tuple(_policy_spec(p) for p in self.policies))
        if not self.policies:
            raise ConfigError("at least one policy is required")
        names = [p.name for p in self.policies]
        if len(set(names)) != len(names):
            raise ConfigError("policy names must be unique")
        try:
            horizons = tuple(int(n) for n in self.horizons)
        except (TypeError, ValueError):
            raise ConfigError("horizons must be a list of integers") from None
        if not horizons or any(n < 1 for n in horizons) or \
                any(h != n for h, n in zip(horizons, self.horizons)):
            raise ConfigError("horizons must be a non-empty list of positive integers")
        object.__setattr__(self, "horizons", horizons)
        if isinstance(self.replicates, bool) or not isinstance(self.replicates, int) \
                or self.replicates < 1:
            raise ConfigError("replicates must be an integer >= 1")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) \
                or not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if isinstance(self.scenario, str):
            try:
                paper_scenario(self.scenario)
            except InvalidArgumentError as exc:
                raise ConfigError(str(exc)) from None
        elif not isinstance(self.scenario, ScenarioModel):
            raise ConfigError("scenario must be a name or a scenario model")
        if not isinstance(self.analysis, dict):
            raise ConfigError("analysis must be an object")
        for key, val in self.analysis.items():
            if key not in ANALYSES:
                raise ConfigError(f"unknown analysis {key!r}; valid: {', '.join(ANALYSES)}")
            if not isinstance(val, (bool, dict)):
                raise ConfigError(f"analysis {key!r} must be a boolean or an object")

    def model(self) -> ScenarioModel:
        if isinstance(self.scenario, ScenarioModel):
            return self.scenario
        return paper_scenario(self.scenario)

    def analysis_params(self, key: str) -> Optional[dict]:
        val = self.analysis.get(key, False)
        if val is False:
            return None
        return {} if val is True else dict(val)

    def to_dict(self) -> dict:
        scen = self.scenario if isinstance(self.scenario, str) else self.scenario.to_dict()
        return {
            "scenario": scen,
            "policies": [p.to_dict() for p in self.policies],
            "horizons": list(self.horizons),
            "replicates": self.replicates,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "analysis": dict(self.analysis),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {"scenario", "policies", "horizons", "replicates", "seed", "output_dir",
                 "analysis"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        kw = dict(d)
        scen = kw.get("scenario", "main")
        if isinstance(scen, dict):
            try:
                kw["scenario"] = ScenarioModel.from_dict(scen)
            except (InvalidArgumentError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad scenario: {exc}") from None
        for key in ("policies", "horizons"):
            if key in kw and not isinstance(kw[key], list):
                raise ConfigError(f"{key} must be a list")
        return cls(**kw)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON (line {exc.lineno}): {exc.msg}") \
                from None
        return cls.from_dict(d)

    def replace(self, **changes) -> "ExperimentConfig":
        d = self.to_dict()
        d.update({k: v for k, v in changes.items() if v is not None})
        return ExperimentConfig.from_dict(d)

    def sha256(self) -> str:
        """Digest of everything except the output location."""
        d = self.to_dict()
        del d["output_dir"]
        return config_hash(d)


def config_hash(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return ExperimentConfig.from_json(text)


# --------------------------------------------------------------------- CSV


def fmt(x) -> str:
    """Shortest round-trip text for numbers; booleans as 0/1."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


def metadata_line(seed: int, digest: str) -> str:
    return f"# seed={seed} config_sha256={digest} version={__version__}"


def render_csv(columns: Sequence[str], rows: Iterable[Sequence], seed: int, digest: str) -> str:
    buf = io.StringIO()
    buf.write(metadata_line(seed, digest) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path: str, columns, rows, seed: int, digest: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(render_csv(columns, rows, seed, digest))
    return path


# ------------------------------------------------------------ trace files

TRACE_COLUMNS = ("n", "H", "B", "gamma")


def read_trace_csv(path: str) -> Trace:
    """Trace from a CSV with header ``n,H,B,gamma``; ``#`` lines are skipped."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read trace {path}: {exc.strerror}") from None
    header, rows = None, []
    for lineno, line in enumerate(lines, 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cells = [c.strip() for c in next(csv.reader([line]))]
        if header is None:
            if tuple(cells) != TRACE_COLUMNS:
                raise ConfigError(f"{path}:{lineno}: expected header n,H,B,gamma")
            header = cells
            continue
        if len(cells) != 4:
            raise ConfigError(f"{path}:{lineno}: expected 4 fields, got {len(cells)}")
        try:
            n = int(cells[0])
            h, b, g = (float(c) for c in cells[1:])
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: non-numeric field") from None
        if n != len(rows) + 1:
            raise ConfigError(f"{path}:{lineno}: slot index {n}, expected {len(rows) + 1}")
        if not (0 <= h < math.inf and b >= 0 and 0 < g < math.inf):
            raise ConfigError(f"{path}:{lineno}: need finite H >= 0, B >= 0 and gamma > 0")
        rows.append((h, b, g))
    if not rows:
        raise ConfigError(f"{path}: no trace rows")
    H, B, G = zip(*rows)
    return Trace(H, B, G)


def trace_csv(trace: Trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for i in range(trace.n_slots):
        w.writerow([i + 1] + [fmt(float(a[i])) for a in
                              (trace.harvests, trace.arrivals, trace.gains)])
    return buf.getvalue()


# ----------------------------------------------------------------- offline

SCHEDULE_COLUMNS = ("n", "H", "B", "gamma", "w", "rho", "rate", "e", "b", "binding")


def schedule_rows(trace: Trace, e_1: float, b_1: float, mode: str = "log", rate: str = "log"):
    """Offline schedule rows with the binding buffer of each slot."""
    f = None if mode == "log" else RATES[rate]()
    sched = solve_offline(trace, e_1, b_1, "log" if f is None else f)
    rows, e, b = [], float(e_1), float(b_1)
    for i in range(trace.n_slots):
        state = BufferState(e, b, float(trace.gains[i]), i + 1)
        w = float(sched.water[i])
        wb = water_bounds_log(w, i + 1, trace, state) if f is None else \
            water_bounds_general(w, i + 1, trace, state, f)
        binding = "energy" if wb.w_energy <= wb.w_data else "data"
        rows.append((i + 1, float(trace.harvests[i]), float(trace.arrivals[i]),
                     float(trace.gains[i]), w, float(sched.power[i]), float(sched.rate[i]),
                     e, b, binding))
        if i + 1 < trace.n_slots:
            e = max(e - float(sched.power[i]), 0.0) + float(trace.harvests[i + 1])
            b = max(b - float(sched.rate[i]), 0.0) + float(trace.arrivals[i + 1])
    return sched, rows


# -------------------------------------------------------------- experiment

EXPERIMENT_COLUMNS = (
    "horizon", "policy", "replicates",
    "throughput_bits_per_slot", "throughput_se", "throughput_mbps",
    "energy_per_slot", "energy_se", "eta", "eta_se", "gap_bits", "gap_se",
)


def build_policy(spec: PolicySpec, model: ScenarioModel):
    p = spec.params
    try:
        if spec.name == "heuristic":
            return HeuristicPolicy(**p)
        if spec.name == "power-halving":
            return PowerHalvingPolicy(**p)
        if spec.name == "mean-offline":
            return MeanOfflinePolicy(**p)
        if spec.name == "zero":
            return ZeroPolicy(**p)
        if spec.name == "dp":
            return DpPolicy(dp_solve(model, **p))
    except TypeError as exc:
        raise ConfigError(f"bad parameters for policy {spec.name!r}: {exc}") from None
    raise ConfigError(f"policy {spec.name!r} cannot be simulated")


def _run_block(cfg_dict: dict, horizon: int, start: int, stop: int):
    """Per-replicate (throughput, energy) totals, offline first then policies."""
    cfg = ExperimentConfig.from_dict(cfg_dict)
    model = cfg.model().with_horizon(horizon)
    online = [(i, build_policy(s, model)) for i, s in enumerate(cfg.policies)
              if s.name != "offline"]
    out = np.zeros((stop - start, 1 + len(online), 2))
    root = RngStream(cfg.seed)
    for row, k in enumerate(range(start, stop)):
        stream = root.child(horizon, k)
        tr = sample_trace(model, stream.child(0))
        e1, b1 = model.initial_buffers(tr)
        off = solve_offline(tr, e1, b1)
        out[row, 0] = off.total_throughput, off.total_energy
        for j, (i, pol) in enumerate(online):
            sched, _ = simulate_policy(pol, tr, e1, b1, model, stream.child(1, i))
            out[row, j + 1] = sched.total_throughput, sched.total_energy
    return out


def _blocks(replicates: int, threads: int):
    size = max(1, math.ceil(replicates / max(1, threads * 4)))
    return [(s, min(s + size, replicates)) for s in range(0, replicates, size)]


def _mean_se(a: np.ndarray):
    n = len(a)
    return float(a.mean()), (float(a.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0)


@dataclass
class ExperimentResult:
    rows: list
    totals: dict  # horizon -> array (replicates, 1 + online policies, 2)


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Paired Monte Carlo of every policy against the offline optimum."""
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    cfg_dict = cfg.to_dict()
    totals = {}
    jobs = [(n, s, e) for n in cfg.horizons for s, e in _blocks(cfg.replicates, threads)]
    if threads == 1:
        parts = [_run_block(cfg_dict, *job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            futures = [ex.submit(_run_block, cfg_dict, *job) for job in jobs]
            parts = [f.result() for f in futures]
    for n in cfg.horizons:
        totals[n] = np.concatenate([p for job, p in zip(jobs, parts) if job[0] == n])
    model = cfg.model()
    names = ["offline"] + [s.name for s in cfg.policies if s.name != "offline"]
    order = {s.name: i for i, s in enumerate(cfg.policies)}
    rows = []
    for n in cfg.horizons:
        T = totals[n]
        off = T[:, 0, 0]
        for j, name in enumerate(names):
            if name not in order:
                continue
            thr, en = T[:, j, 0], T[:, j, 1]
            m_thr, se_thr = _mean_se(thr / n)
            m_en, se_en = _mean_se(en / n)
            if j == 0:
                eta, eta_se = 1.0, 0.0
            else:
                eta, eta_se = ratio_of_means(thr, off)
            gap, gap_se = _mean_se(off - thr)
            mbps = m_thr / model.slot_duration / 1e6
            rows.append((order[name], n, name, cfg.replicates, m_thr, se_thr, mbps,
                         m_en, se_en, eta, eta_se, gap, gap_se))
    rows.sort(key=lambda r: (cfg.horizons.index(r[1]), r[0]))
    return ExperimentResult([r[1:] for r in rows], totals)


PROFILE_COLUMNS_HEAD = ("n", "H", "B", "gamma", "offline_w")


def profile_rows(cfg: ExperimentConfig, horizon: int):
    """Water levels of every policy on replicate 0 of ``horizon``."""
    model = cfg.model().with_horizon(horizon)
    stream = RngStream(cfg.seed).child(horizon, 0)
    tr = sample_trace(model, stream.child(0))
    e1, b1 = model.initial_buffers(tr)
    cols = [solve_offline(tr, e1, b1).water]
    names = []
    for i, spec in enumerate(cfg.policies):
        if spec.name == "offline":
            continue
        sched, _ = simulate_policy(build_policy(spec, model), tr, e1, b1, model,
                                   stream.child(1, i))
        cols.append(sched.water)
        names.append(f"{spec.name}_w")
    rows = [(i + 1, float(tr.harvests[i]), float(tr.arrivals[i]), float(tr.gains[i]),
             *(float(c[i]) for c in cols)) for i in range(horizon)]
    return PROFILE_COLUMNS_HEAD + tuple(names), rows


# --------------------------------------------------------------------- CDF

CDF_COLUMNS = ("m", "threshold", "asymptotic", "finite_horizon", "empirical", "se")
CDF_DEFAULTS = {"energy": 88.0, "harvest": 180.0, "p": 0.45, "remaining": 99,
                "replicates": 100_000, "m_max": 20}


def cdf_params_from_scenario(model: ScenarioModel) -> dict:
    if not isinstance(model.harvest, Bernoulli):
        raise ConfigError("CDF analysis needs a Bernoulli harvest")
    if not (isinstance(model.channel, Constant) and model.channel.value == 1.0):
        raise ConfigError("CDF analysis needs a constant unit channel gain")
    if model.initial_energy is None:
        raise ConfigError("CDF analysis needs an initial energy")
    return {"energy": model.initial_energy, "harvest": model.harvest.value,
            "p": model.harvest.p, "remaining": model.horizon - 1}


def cdf_rows(seed: int, energy: float, harvest: float, p: float, remaining: int,
             replicates: int, m_max: int):
    """Distribution of the offline power at thresholds ``harvest / m``."""
    if m_max < 1 or replicates < 1 or remaining < 0:
        raise ConfigError("need m_max >= 1, replicates >= 1 and remaining >= 0")
    if not 0 < p < 1:
        raise ConfigError("p must lie in (0, 1)")
    ms = np.arange(1, m_max + 1)
    thr = harvest / ms
    F, se = mc_cdf(energy, remaining, thr, replicates, p, harvest, RngStream(seed, 2))
    rows = []
    for k, m in enumerate(ms):
        rows.append((int(m), float(thr[k]), float(asymptotic_cdf(energy, int(m), p, harvest)),
                     float(finite_horizon_cdf(remaining, energy, int(m), p, harvest)),
                     float(F[k]), float(se[k])))
    return rows


# -------------------------------------------------------------------- fill

FILL_COLUMNS = (
    "energy", "remaining", "p", "mean_power",
    "lb", "lb_se", "simplified", "simplified_se", "variance", "variance_se",
    "spend_bound", "spend_bound_se", "fill", "fill_se", "ordered",
)
FILL_DEFAULTS = {"harvest": 24.0, "energies": [5.0, 25.0, 55.0], "remaining": [5, 25],
                 "probs": [round(0.1 * k, 1) for k in range(1, 10)], "replicates": 10_000}


def fill_rows(seed: int, harvest: float, energies, remaining, probs, replicates: int):
    """Fill bounds and the Monte Carlo fill of spending the mean offline power."""
    rows, idx = [], 0
    for K in remaining:
        for e in energies:
            for p in probs:
                if not 0 < p <= 1:
                    raise ConfigError("probabilities must lie in (0, 1]")
                model = ScenarioModel(Bernoulli(p, harvest), Constant(0.0), Constant(1.0),
                                      int(K) + 1, initial_data=math.inf)
                state = BufferState(float(e), math.inf, 1.0, 1)
                sample = StaticSample(state, model, replicates, RngStream(seed, 1).child(idx))
                idx += 1
                b = max_fill_lower_bounds(sample)
                sb = fill_lower_bound(b.mean_power, sample)
                f, fse = sample.fill(b.mean_power)
                ordered = b.lb >= b.simplified - 1e-12 and b.simplified >= b.variance - 1e-12
                rows.append((float(e), int(K), float(p), b.mean_power, b.lb, b.lb_se,
                             b.simplified, b.simplified_se, b.variance, b.variance_se,
                             sb.mean, sb.se, f, fse, ordered))
    return rows
