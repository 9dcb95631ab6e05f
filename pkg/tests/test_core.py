import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehwater.core import (
    LN2,
    BufferState,
    Schedule,
    SlotDecision,
    Trace,
    apply_slot,
    check_feasibility,
    check_feasibility_windows,
    clamp_decision,
    final_buffers,
    log_rate,
    natural_log_rate,
    power_for_rate,
    power_from_water,
    rate_of,
    rate_of_power,
    sqrt_rate,
    water_from_power,
)
from ehwater.errors import InfeasibleDecisionError, InvalidArgumentError

RATES = [log_rate(), natural_log_rate(), sqrt_rate()]
F = log_rate()


@pytest.mark.parametrize("f", RATES, ids=lambda f: f.name)
def test_rate_function_shape(f):
    assert f.eval(1.0) == pytest.approx(0.0, abs=1e-15)
    xs = np.linspace(1.0, 200.0, 400)
    assert np.all(np.diff(f.eval(xs)) > 0)
    a, b = xs[:-1:3], xs[2::3][: len(xs[:-1:3])]
    assert np.all(f.eval((a + b) / 2) >= (f.eval(a) + f.eval(b)) / 2 - 1e-12)
    assert np.isfinite(f.marginal(1.0))
    assert f.marginal(1e12) < 1e-5
    assert np.allclose(f.inverse_marginal(f.marginal(xs)), xs, rtol=1e-10)


def test_power_from_water_examples():
    assert power_from_water(1.0, 1.0, F) == 0.0  # activation threshold
    assert power_from_water(0.25, 4.0, F) == 0.0
    assert power_from_water(2.0, 1.0, F) == pytest.approx(1.0)
    assert power_from_water(6.0, 0.5, F) == pytest.approx(4.0)


def test_water_from_power_examples():
    assert water_from_power(1.0, 1.0, F) == pytest.approx(2.0)
    assert water_from_power(0.0, 4.0, F) == pytest.approx(0.25)


@pytest.mark.parametrize("f", RATES, ids=lambda f: f.name)
def test_water_power_round_trip(f):
    rng = np.random.default_rng(3)
    for _ in range(100):
        g = rng.uniform(0.1, 40)
        threshold = 1.0 / (g * f.activation)
        w = threshold * rng.uniform(1.001, 50)
        rho = power_from_water(w, g, f)
        assert rho > 0
        assert water_from_power(rho, g, f) == pytest.approx(w, rel=1e-9)


def test_conversion_rejects_bad_input():
    for args in [(math.nan, 1.0), (1.0, 0.0), (-1.0, 1.0), (math.inf, 1.0)]:
        with pytest.raises(InvalidArgumentError):
            power_from_water(*args, F)
    with pytest.raises(InvalidArgumentError):
        water_from_power(-1.0, 1.0, F)


def test_rate_of_examples():
    for g in (0.3, 1.0, 7.0):
        assert rate_of(1.0 / g, g, F) == 0.0
    assert rate_of(4.0, 1.0, F) == pytest.approx(1.0)
    w, g = np.array([0.5, 3.0, 40.0]), np.array([2.0, 1.0, 0.1])
    assert np.allclose(rate_of(w, g, F), np.maximum(0.5 * np.log2(w * g), 0.0))


@pytest.mark.parametrize("f", RATES, ids=lambda f: f.name)
def test_marginal_rate_is_inverse_scaled_water(f):
    """d rate / d power = 1/(c w); c = 1 gives the textbook 1/w."""
    rng = np.random.default_rng(9)
    for _ in range(20):
        g = rng.uniform(0.5, 5.0)
        rho = rng.uniform(0.5, 20.0)
        h = 1e-6
        d = (rate_of_power(rho + h, g, f) - rate_of_power(rho - h, g, f)) / (2 * h)
        w = water_from_power(rho, g, f)
        assert d == pytest.approx(1.0 / (f.water_scale * w), rel=1e-5)


def test_marginal_example_natural_log():
    f = natural_log_rate()
    rho = power_from_water(4.0, 1.0, f)
    h = 1e-6
    d = (rate_of_power(rho + h, 1.0, f) - rate_of_power(rho - h, 1.0, f)) / (2 * h)
    assert d == pytest.approx(1.0 / 4.0, abs=1e-5)
    # the half-log2 convention carries the 2 ln 2 scale
    rho = power_from_water(4.0, 1.0, F)
    d = (rate_of_power(rho + h, 1.0, F) - rate_of_power(rho - h, 1.0, F)) / (2 * h)
    assert d == pytest.approx(1.0 / (2 * LN2 * 4.0), abs=1e-5)


@pytest.mark.parametrize("f", RATES, ids=lambda f: f.name)
def test_power_monotone_in_water(f):
    w = np.linspace(0.0, 100.0, 5001)
    rho = power_from_water(w, 0.7, f)
    assert np.all(np.diff(rho) >= 0)


@pytest.mark.parametrize("f", RATES, ids=lambda f: f.name)
def test_power_for_rate_inverts(f):
    for rho in (0.0, 0.3, 5.0, 80.0):
        r = rate_of_power(rho, 2.0, f)
        assert power_for_rate(r, 2.0, f) == pytest.approx(rho, abs=1e-9)


def test_slot_decision_consistency():
    d = SlotDecision.from_water(3.0, 2.0, F)
    assert d.power == pytest.approx(2.5)
    assert d.rate == pytest.approx(0.5 * math.log2(6.0))
    z = SlotDecision.from_power(0.0, 2.0, F)
    assert z.water == pytest.approx(0.5) and z.rate == 0.0


def test_apply_slot_examples():
    s = BufferState(5.0, 10.0, 1.0, 1)
    nxt = apply_slot(s, SlotDecision(0.0, 3.0, 2.0), 2.0, 1.0, 3.0)
    assert (nxt.energy, nxt.data, nxt.gain, nxt.slot) == (4.0, 9.0, 3.0, 2)
    assert apply_slot(s, SlotDecision(0.0, 5.0, 0.0), 0.0, 0.0, 1.0).energy == 0.0
    with pytest.raises(InfeasibleDecisionError) as exc:
        apply_slot(s, SlotDecision(0.0, 6.0, 0.0), 0.0, 0.0, 1.0)
    assert exc.value.kind == "energy-causality"
    assert exc.value.deficit == pytest.approx(1.0)
    with pytest.raises(InfeasibleDecisionError) as exc:
        apply_slot(s, SlotDecision(0.0, 0.0, 10.5), 0.0, 0.0, 1.0)
    assert exc.value.kind == "data-causality"


def test_apply_slot_tolerates_rounding():
    s = BufferState(1.0, 1.0, 1.0, 1)
    nxt = apply_slot(s, SlotDecision(0.0, 1.0 + 1e-12, 1.0 + 1e-12), 0.0, 0.0, 1.0)
    assert nxt.energy == 0.0 and nxt.data == 0.0


def test_buffer_state_validation():
    with pytest.raises(InvalidArgumentError):
        BufferState(-1.0, 0.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        BufferState(1.0, 0.0, 0.0)


def test_trace_validation():
    with pytest.raises(InvalidArgumentError):
        Trace([], [], [])
    with pytest.raises(InvalidArgumentError):
        Trace([1.0, 2.0], [1.0], [1.0, 1.0])
    with pytest.raises(InvalidArgumentError):
        Trace([-1.0], [1.0], [1.0])
    with pytest.raises(InvalidArgumentError):
        Trace([1.0], [1.0], [0.0])
    t = Trace([1, 2, 3], [0, 0, 1], [1, 2, 3])
    assert t.n_slots == 3 and t.tail(2) == Trace([2, 3], [0, 1], [2, 3])


def test_schedule_totals():
    s = Schedule([1, 2], [0.1, 0.2], [1.0, 2.5])
    assert s.total_energy == pytest.approx(0.3, rel=1e-12)
    assert s.total_throughput == pytest.approx(3.5, rel=1e-12)
    assert s.decisions[1] == SlotDecision(2.0, 0.2, 2.5)
    with pytest.raises(InvalidArgumentError):
        Schedule([1], [1, 2], [1])


def test_feasibility_examples():
    tr = Trace([2.0, 3.0, 0.0], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0])
    zero = Schedule(np.ones(3), np.zeros(3), np.zeros(3))
    assert check_feasibility(tr, zero, 2.0, 1.0).feasible
    early = Schedule(np.ones(3), [5.0, 0.0, 0.0], [0.5, 0.0, 0.0])
    rep = check_feasibility(tr, early, 2.0, 1.0)
    assert not rep.feasible
    assert rep.violations[0][:2] == (1, "energy-causality")
    with pytest.raises(InvalidArgumentError):
        check_feasibility(tr, Schedule([1], [0], [0]), 2.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 5), st.floats(0, 5), st.floats(0, 3), st.floats(0, 3)),
                min_size=1, max_size=6))
def test_feasibility_simulation_matches_windows(rows):
    H, B, P, R = (np.array(c) for c in zip(*rows))
    tr = Trace(H, B, np.ones(len(H)))
    sched = Schedule(np.ones(len(H)), P, R)
    sim = check_feasibility(tr, sched, H[0], B[0]).feasible
    assert sim == check_feasibility_windows(tr, sched, H[0], B[0])


def test_buffer_conservation():
    rng = np.random.default_rng(4)
    tr = Trace(rng.uniform(0, 5, 20), rng.uniform(0, 3, 20), rng.uniform(0.5, 2, 20))
    state = BufferState(tr.harvests[0], tr.arrivals[0], tr.gains[0], 1)
    decisions = []
    for i in range(20):
        d = clamp_decision(rng.uniform(0, 4), state, F)
        decisions.append(d)
        if i < 19:
            state = apply_slot(state, d, tr.harvests[i + 1], tr.arrivals[i + 1], tr.gains[i + 1])
    sched = Schedule.from_decisions(decisions)
    assert check_feasibility(tr, sched, tr.harvests[0], tr.arrivals[0]).feasible
    e, b = final_buffers(tr, sched, tr.harvests[0], tr.arrivals[0])
    assert e == pytest.approx(state.energy - decisions[-1].power, rel=1e-9, abs=1e-9)
    assert b == pytest.approx(state.data - decisions[-1].rate, rel=1e-9, abs=1e-9)


def test_clamp_decision_respects_both_buffers():
    s = BufferState(10.0, 1.0, 1.0, 1)
    d = clamp_decision(50.0, s, F)
    assert d.rate == pytest.approx(1.0) and d.power == pytest.approx(3.0)
    d = clamp_decision(50.0, BufferState(2.0, 100.0, 1.0), F)
    assert d.power == 2.0
