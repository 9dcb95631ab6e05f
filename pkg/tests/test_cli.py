import csv
import json
import math

import numpy as np
import pytest

from ehwater import __version__
from ehwater.cli import main
from ehwater.core import Schedule, Trace, check_feasibility
from ehwater.errors import ConfigError
from ehwater.experiments import (
    ExperimentConfig,
    config_hash,
    read_trace_csv,
    render_csv,
    run_experiment,
    trace_csv,
)


def read_rows(path):
    with open(path) as fh:
        meta = fh.readline()
        return meta, list(csv.DictReader(fh))


def write(path, text):
    path.write_text(text)
    return str(path)


# ----------------------------------------------------------------- offline


def test_single_slot_offline(tmp_path):
    trace = write(tmp_path / "t.csv", "n,H,B,gamma\n1,3.0,inf,1.0\n")
    assert main(["offline", "--trace", trace, "--out", str(tmp_path)]) == 0
    meta, rows = read_rows(tmp_path / "offline.csv")
    assert meta.startswith("# seed=1 config_sha256=") and f"version={__version__}" in meta
    (row,) = rows
    assert float(row["rho"]) == pytest.approx(3.0)
    assert float(row["w"]) == pytest.approx(4.0)
    assert float(row["rate"]) == pytest.approx(1.0)
    assert row["binding"] == "energy"


def test_offline_csv_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["offline", "--scenario", "main", "--seed", "1", "--out", str(d)]) == 0
    assert (a / "offline.csv").read_bytes() == (b / "offline.csv").read_bytes()
    assert main(["offline", "--scenario", "main", "--seed", "2", "--out", str(b)]) == 0
    assert (a / "offline.csv").read_bytes() != (b / "offline.csv").read_bytes()


def test_offline_csv_reloads_as_feasible(tmp_path):
    assert main(["offline", "--scenario", "main", "--seed", "7", "--horizon", "40",
                 "--out", str(tmp_path)]) == 0
    _, rows = read_rows(tmp_path / "offline.csv")
    col = lambda k: np.array([float(r[k]) for r in rows])  # noqa: E731
    trace = Trace(col("H"), col("B"), col("gamma"))
    sched = Schedule(col("w"), col("rho"), col("rate"))
    assert len(rows) == 40
    assert check_feasibility(trace, sched, trace.harvests[0], trace.arrivals[0]).feasible
    assert np.all(np.diff(col("w")) >= -1e-9)


def test_offline_general_mode_matches_log(tmp_path):
    for mode in ("log", "general"):
        d = tmp_path / mode
        assert main(["offline", "--seed", "3", "--horizon", "20", "--mode", mode,
                     "--out", str(d)]) == 0
    _, a = read_rows(tmp_path / "log" / "offline.csv")
    _, b = read_rows(tmp_path / "general" / "offline.csv")
    wa = np.array([float(r["w"]) for r in a])
    wb = np.array([float(r["w"]) for r in b])
    assert np.max(np.abs(wa - wb)) <= 1e-6


def test_trace_parse_error_reports_line(tmp_path, capsys):
    trace = write(tmp_path / "t.csv", "n,H,B,gamma\n1,3,4,1\n2,oops,1,1\n")
    assert main(["offline", "--trace", trace, "--out", str(tmp_path)]) == 2
    assert "t.csv:3" in capsys.readouterr().err


@pytest.mark.parametrize("body", [
    "n,H,B\n1,1,1\n",
    "n,H,B,gamma\n1,-1,1,1\n",
    "n,H,B,gamma\n1,1,1,0\n",
    "n,H,B,gamma\n",
])
def test_bad_traces_are_config_errors(tmp_path, body):
    trace = write(tmp_path / "t.csv", body)
    with pytest.raises(ConfigError):
        read_trace_csv(trace)
    assert main(["offline", "--trace", trace, "--out", str(tmp_path)]) == 2


def test_trace_round_trip(tmp_path):
    tr = Trace([1.0, 0.0, 2.5], [3.0, math.inf, 0.0], [1.0, 0.5, 2.0])
    back = read_trace_csv(write(tmp_path / "t.csv", trace_csv(tr)))
    for f in ("harvests", "arrivals", "gains"):
        assert np.array_equal(getattr(tr, f), getattr(back, f))


# ---------------------------------------------------------------- simulate


def test_simulate_writes_online_schedule(tmp_path):
    assert main(["simulate", "--policy", "power-halving", "--horizon", "15",
                 "--out", str(tmp_path)]) == 0
    _, rows = read_rows(tmp_path / "simulate.csv")
    assert len(rows) == 15
    assert all(float(r["rho"]) <= float(r["e"]) + 1e-9 for r in rows)


def test_unknown_policy_is_exit_2(tmp_path, capsys):
    assert main(["simulate", "--policy", "psychic", "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "psychic" in err and "heuristic" in err


def test_argparse_errors_are_exit_2(capsys):
    assert main(["offline", "--seed", "-4"]) == 2
    assert main(["nonsense"]) == 2
    assert main([]) == 2


def test_dp_cap_is_exit_4(tmp_path):
    cfg = {"policies": [{"name": "dp", "params": {"energy_levels": 100000}}],
           "horizons": [50], "replicates": 1}
    path = write(tmp_path / "c.json", json.dumps(cfg))
    assert main(["experiment", "--config", path, "--out", str(tmp_path)]) == 4


# -------------------------------------------------------------- experiment


def small_config(**kw):
    base = dict(policies=("offline", "heuristic", "power-halving", "zero"),
                horizons=(5, 12), replicates=9, seed=5)
    base.update(kw)
    return ExperimentConfig(**base)


def test_config_round_trip():
    cfg = small_config(analysis={"cdf": {"replicates": 100}, "profiles": True})
    back = ExperimentConfig.from_json(cfg.to_json())
    assert back == cfg and back.sha256() == cfg.sha256()
    assert cfg.replace(output_dir="elsewhere").sha256() == cfg.sha256()
    assert cfg.replace(seed=6).sha256() != cfg.sha256()


@pytest.mark.parametrize("bad", [
    {"horizons": []},
    {"horizons": [0]},
    {"replicates": 0},
    {"seed": -1},
    {"policies": ["offline", "offline"]},
    {"policies": [{"name": "heuristic", "colour": 1}]},
    {"scenario": "nowhere"},
    {"analysis": {"tea": True}},
    {"surprise": 1},
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**small_config().to_dict(), **bad})


def test_config_json_error_has_line(tmp_path, capsys):
    path = write(tmp_path / "c.json", '{\n  "seed": 1,\n  "horizons": [5,,]\n}\n')
    assert main(["experiment", "--config", path, "--out", str(tmp_path)]) == 2
    assert "line 3" in capsys.readouterr().err


def test_experiment_rows_and_offline_efficiency():
    res = run_experiment(small_config())
    assert [(r[0], r[1]) for r in res.rows] == [
        (n, p) for n in (5, 12) for p in ("offline", "heuristic", "power-halving", "zero")]
    for r in res.rows:
        eta = r[8]
        if r[1] == "offline":
            assert eta == 1.0 and r[9] == 0.0
        elif r[1] == "zero":
            assert eta == 0.0
        else:
            assert 0.0 < eta <= 1.0 + 1e-9
    T = res.totals[12]
    assert T.shape == (9, 4, 2)
    assert np.all(T[:, 0, 0] >= T[:, 1:, 0].max(axis=1) - 1e-9)


def test_experiment_is_reproducible_across_threads(tmp_path):
    cfg = small_config()
    one = run_experiment(cfg, threads=1)
    three = run_experiment(cfg, threads=3)
    digest = config_hash(cfg.to_dict())
    cols = [str(i) for i in range(12)]
    assert render_csv(cols, one.rows, 5, digest) == render_csv(cols, three.rows, 5, digest)


def test_experiment_cli_outputs(tmp_path):
    cfg = small_config(horizons=(6,), replicates=4,
                       analysis={"profiles": True,
                                 "cdf": {"replicates": 500, "m_max": 4},
                                 "fill_bounds": {"energies": [5], "remaining": [5],
                                                 "probs": [0.5], "replicates": 200}})
    path = write(tmp_path / "c.json", cfg.to_json())
    outs = []
    for d in ("x", "y"):
        out = tmp_path / d
        assert main(["experiment", "--config", path, "--out", str(out)]) == 0
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    assert names == ["cdf.csv", "experiment.csv", "fill.csv", "profile_N6.csv"]
    for n in names:
        assert (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes()
    meta, rows = read_rows(outs[0] / "experiment.csv")
    assert f"config_sha256={cfg.sha256()}" in meta
    assert {r["policy"] for r in rows} == {"offline", "heuristic", "power-halving", "zero"}


def test_cli_overrides_change_seed(tmp_path):
    path = write(tmp_path / "c.json", small_config(horizons=(4,), replicates=3).to_json())
    assert main(["experiment", "--config", path, "--seed", "11", "--out", str(tmp_path)]) == 0
    meta, _ = read_rows(tmp_path / "experiment.csv")
    assert meta.startswith("# seed=11 ")


# -------------------------------------------------------------- cdf / fill


def test_cdf_command(tmp_path):
    assert main(["cdf", "--replicates", "2000", "--m-max", "6", "--out", str(tmp_path)]) == 0
    _, rows = read_rows(tmp_path / "cdf.csv")
    assert [int(r["m"]) for r in rows] == list(range(1, 7))
    for r in rows:
        assert abs(float(r["empirical"]) - float(r["finite_horizon"])) <= \
            3 * max(float(r["se"]), 1 / 2000) + 1e-12


def test_fill_command(tmp_path):
    assert main(["fill", "--energies", "5,25", "--remaining", "5", "--probs", "0.3,0.7",
                 "--replicates", "500", "--out", str(tmp_path)]) == 0
    _, rows = read_rows(tmp_path / "fill.csv")
    assert len(rows) == 4
    for r in rows:
        assert float(r["lb"]) >= float(r["simplified"]) >= float(r["variance"])


def test_fill_bad_list_is_exit_2(tmp_path):
    assert main(["fill", "--probs", "0.3,x", "--out", str(tmp_path)]) == 2
