"""``ehwater`` command line: offline schedules, simulations and sweeps.

Every CSV starts with ``# seed=<seed> config_sha256=<hash> version=<v>``
followed by a header row.  Exit codes: 0 ok, 2 config error, 3 solver
non-convergence, 4 resource cap refused.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from typing import Optional, Sequence

from . import experiments as ex
from .core import check_feasibility
from .errors import (
    ConfigError,
    InvalidArgumentError,
    NonConvergenceError,
    ResourceCapError,
    UnsupportedPolicyError,
)
from .online import simulate_policy
from .processes import PAPER_SCENARIOS, RngStream, paper_scenario, sample_trace

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CAP = 0, 2, 3, 4


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _floats(text: str):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list: {text!r}") from None


def _ints(text: str):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list: {text!r}") from None


def _scenario(name: Optional[str], default: str):
    try:
        return paper_scenario(name or default)
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from None


def _out(args, name: str) -> str:
    return os.path.join(args.out, name)


def _report(path: str):
    print(path)


# ---------------------------------------------------------------- commands


def cmd_offline(args) -> int:
    if args.trace:
        trace = ex.read_trace_csv(args.trace)
        e1 = float(trace.harvests[0]) if args.e1 is None else args.e1
        b1 = float(trace.arrivals[0]) if args.b1 is None else args.b1
        source = {"trace": ex.trace_csv(trace)}
    else:
        model = _scenario(args.scenario, "main")
        if args.horizon:
            model = model.with_horizon(args.horizon)
        trace = sample_trace(model, RngStream(args.seed))
        e1, b1 = model.initial_buffers(trace)
        e1 = e1 if args.e1 is None else args.e1
        b1 = b1 if args.b1 is None else args.b1
        source = {"scenario": model.to_dict()}
    if e1 < 0 or b1 < 0:
        raise ConfigError("initial buffers must be non-negative")
    sched, rows = ex.schedule_rows(trace, e1, b1, args.mode, args.rate)
    report = check_feasibility(trace, sched, e1, b1)
    if not report.feasible:
        raise NonConvergenceError(f"schedule infeasible: {report.violations[:3]}", math.nan,
                                  math.nan)
    digest = ex.config_hash({"command": "offline", "seed": args.seed, "mode": args.mode,
                             "rate": args.rate, "e1": e1, "b1": b1, **source})
    _report(ex.write_csv(_out(args, "offline.csv"), ex.SCHEDULE_COLUMNS, rows,
                         args.seed, digest))
    return EXIT_OK


SIMULATE_COLUMNS = ("n", "H", "B", "gamma", "w", "rho", "rate", "e", "b", "offline_w")


def cmd_simulate(args) -> int:
    model = _scenario(args.scenario, "main")
    if args.horizon:
        model = model.with_horizon(args.horizon)
    spec = ex.PolicySpec(args.policy)
    if spec.name == "offline":
        raise ConfigError("simulate needs an online policy")
    stream = RngStream(args.seed)
    trace = sample_trace(model, stream.child(0))
    e1, b1 = model.initial_buffers(trace)
    policy = ex.build_policy(spec, model)
    sched, diag = simulate_policy(policy, trace, e1, b1, model, stream.child(1))
    off = ex.solve_offline(trace, e1, b1)
    rows = [(i + 1, float(trace.harvests[i]), float(trace.arrivals[i]), float(trace.gains[i]),
             float(sched.water[i]), float(sched.power[i]), float(sched.rate[i]),
             float(diag.energy[i]), float(diag.data[i]), float(off.water[i]))
            for i in range(trace.n_slots)]
    digest = ex.config_hash({"command": "simulate", "seed": args.seed, "policy": spec.name,
                             "scenario": model.to_dict()})
    _report(ex.write_csv(_out(args, "simulate.csv"), SIMULATE_COLUMNS, rows, args.seed, digest))
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = ex.load_config(args.config) if args.config else ex.ExperimentConfig()
    cfg = cfg.replace(seed=args.seed, replicates=args.replicates, scenario=args.scenario,
                      output_dir=args.out)
    out = cfg.output_dir
    digest = cfg.sha256()
    result = ex.run_experiment(cfg, threads=args.threads)
    _report(ex.write_csv(os.path.join(out, "experiment.csv"), ex.EXPERIMENT_COLUMNS,
                         result.rows, cfg.seed, digest))
    if cfg.analysis_params("profiles") is not None:
        for n in cfg.horizons:
            cols, rows = ex.profile_rows(cfg, n)
            _report(ex.write_csv(os.path.join(out, f"profile_N{n}.csv"), cols, rows,
                                 cfg.seed, digest))
    params = cfg.analysis_params("cdf")
    if params is not None:
        kw = dict(ex.CDF_DEFAULTS)
        kw.update(params)
        _report(ex.write_csv(os.path.join(out, "cdf.csv"), ex.CDF_COLUMNS,
                             _cdf_call(cfg.seed, kw), cfg.seed, digest))
    params = cfg.analysis_params("fill_bounds")
    if params is not None:
        kw = dict(ex.FILL_DEFAULTS)
        kw.update(params)
        _report(ex.write_csv(os.path.join(out, "fill.csv"), ex.FILL_COLUMNS,
                             _fill_call(cfg.seed, kw), cfg.seed, digest))
    return EXIT_OK


def _cdf_call(seed, kw):
    try:
        return ex.cdf_rows(seed, float(kw["energy"]), float(kw["harvest"]), float(kw["p"]),
                           int(kw["remaining"]), int(kw["replicates"]), int(kw["m_max"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad cdf parameters: {exc}") from None


def _fill_call(seed, kw):
    try:
        return ex.fill_rows(seed, float(kw["harvest"]), [float(e) for e in kw["energies"]],
                            [int(k) for k in kw["remaining"]], [float(p) for p in kw["probs"]],
                            int(kw["replicates"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad fill parameters: {exc}") from None


def cmd_cdf(args) -> int:
    kw = dict(ex.CDF_DEFAULTS)
    if args.scenario:
        kw.update(ex.cdf_params_from_scenario(_scenario(args.scenario, "cdf-figure")))
    for key in ("energy", "harvest", "p", "remaining", "m_max"):
        if getattr(args, key) is not None:
            kw[key] = getattr(args, key)
    if args.replicates is not None:
        kw["replicates"] = args.replicates
    rows = _cdf_call(args.seed, kw)
    digest = ex.config_hash({"command": "cdf", "seed": args.seed, **kw})
    _report(ex.write_csv(_out(args, "cdf.csv"), ex.CDF_COLUMNS, rows, args.seed, digest))
    return EXIT_OK


def cmd_fill(args) -> int:
    kw = dict(ex.FILL_DEFAULTS)
    for key in ("harvest", "energies", "remaining", "probs"):
        if getattr(args, key) is not None:
            kw[key] = getattr(args, key)
    if args.replicates is not None:
        kw["replicates"] = args.replicates
    rows = _fill_call(args.seed, kw)
    digest = ex.config_hash({"command": "fill", "seed": args.seed, **kw})
    _report(ex.write_csv(_out(args, "fill.csv"), ex.FILL_COLUMNS, rows, args.seed, digest))
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ehwater", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=1, out="."):
        sp.add_argument("--seed", type=_u64, default=seed, help="root seed (u64)")
        sp.add_argument("--out", default=out, help="output directory")
        sp.add_argument("--scenario", choices=PAPER_SCENARIOS, default=None)

    sp = sub.add_parser("offline", help="solve the offline schedule of one trace")
    common(sp)
    sp.add_argument("--trace", help="CSV trace with columns n,H,B,gamma")
    sp.add_argument("--horizon", type=_positive)
    sp.add_argument("--mode", choices=("log", "general"), default="log")
    sp.add_argument("--rate", choices=tuple(ex.RATES), default="log",
                    help="rate function for --mode general")
    sp.add_argument("--e1", type=float, help="initial energy (default: first harvest)")
    sp.add_argument("--b1", type=float, help="initial data (default: first arrival)")
    sp.set_defaults(func=cmd_offline)

    sp = sub.add_parser("simulate", help="run one online policy on a sampled trace")
    common(sp)
    sp.add_argument("--policy", default="heuristic")
    sp.add_argument("--horizon", type=_positive)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("experiment", help="paired Monte Carlo sweep from a JSON config")
    sp.add_argument("--config", help="experiment config (JSON)")
    sp.add_argument("--seed", type=_u64)
    sp.add_argument("--out", help="output directory (overrides the config)")
    sp.add_argument("--scenario", choices=PAPER_SCENARIOS)
    sp.add_argument("--replicates", type=_positive)
    sp.add_argument("--threads", type=_positive, default=1)
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("cdf", help="distribution of the offline power")
    common(sp)
    sp.add_argument("--replicates", type=_positive)
    sp.add_argument("--energy", type=float)
    sp.add_argument("--harvest", type=float)
    sp.add_argument("--p", type=float)
    sp.add_argument("--remaining", type=int)
    sp.add_argument("--m-max", dest="m_max", type=_positive)
    sp.set_defaults(func=cmd_cdf)

    sp = sub.add_parser("fill", help="fill lower bounds versus Monte Carlo fill")
    sp.add_argument("--seed", type=_u64, default=1)
    sp.add_argument("--out", default=".")
    sp.add_argument("--replicates", type=_positive)
    sp.add_argument("--harvest", type=float)
    sp.add_argument("--energies", type=_floats, help="comma-separated energies")
    sp.add_argument("--remaining", type=_ints, help="comma-separated remaining slot counts")
    sp.add_argument("--probs", type=_floats, help="comma-separated harvest probabilities")
    sp.set_defaults(func=cmd_fill)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, InvalidArgumentError, UnsupportedPolicyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergenceError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ResourceCapError as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_CAP


if __name__ == "__main__":
    sys.exit(main())
