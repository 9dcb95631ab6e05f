"""Throughput-maximizing energy-efficient offline schedules.

The optimal water level of slot ``n`` is the fixed point of
``w -> min(w_energy(w), w_data(w))``: the largest level that, applied to
every remaining slot, barely empties the energy or the data buffer.
Two evaluations of the bounds are offered:

* ``"general"`` -- any :class:`~ehwater.core.RateFunction`, correction terms
  ``K = w - rho(w)`` and ``K = w - f(1 + rho(w) gain)``.
* ``"log"`` -- the half-log2 fast path with ``M = min(1/gain, w)`` and
  ``M = log2 min(1/gain, w)``, solved by the compiled kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .core import (
    BufferState,
    RateFunction,
    Schedule,
    SlotDecision,
    Trace,
    log_rate,
    power_for_rate,
    power_from_water,
    rate_of_power,
    water_from_power,
)
from .errors import InvalidArgumentError, NonConvergenceError, ResourceCapError

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 200


@dataclass(frozen=True)
class WaterBounds:
    """Energy- and data-side bounds at a trial water level.

    ``energy_terms``/``data_terms`` are the running sums of the correction
    terms over the window ``n..n+u``.  In log mode ``data_terms`` holds sums
    of ``log2 min(1/gain, w)``.
    """

    w_energy: float
    w_data: float
    energy_terms: np.ndarray = field(repr=False)
    data_terms: np.ndarray = field(repr=False)

    @property
    def w(self) -> float:
        return min(self.w_energy, self.w_data)


@dataclass(frozen=True)
class FixedPointLog:
    iterates: tuple
    converged: bool
    residual: float

    @property
    def iterations_used(self) -> int:
        return len(self.iterates)


def _window(slot: int, trace: Trace, state: BufferState):
    if not 1 <= slot <= trace.n_slots:
        raise InvalidArgumentError(f"slot {slot} outside 1..{trace.n_slots}")
    i = slot - 1
    gains = np.array(trace.gains[i:])
    gains[0] = state.gain
    return trace.harvests[i + 1:], trace.arrivals[i + 1:], gains


def water_bounds_general(w: float, slot: int, trace: Trace, state: BufferState,
                         f: RateFunction) -> WaterBounds:
    if not w > 0:
        raise InvalidArgumentError("trial water level must be positive")
    fut_h, fut_b, gains = _window(slot, trace, state)
    counts = np.arange(1.0, len(gains) + 1.0)
    rho = power_from_water(np.full(len(gains), float(w)), gains, f)
    k_e = np.cumsum(w - rho)
    k_b = np.cumsum(w - f.eval(1.0 + rho * gains))
    e_num = state.energy + np.concatenate(([0.0], np.cumsum(fut_h)))
    w_energy = float(np.min((e_num + k_e) / counts))
    if math.isinf(state.data):
        w_data = math.inf
    else:
        b_num = state.data + np.concatenate(([0.0], np.cumsum(fut_b)))
        w_data = float(np.min((b_num + k_b) / counts))
    return WaterBounds(w_energy, w_data, k_e, k_b)


def water_bounds_log(w: float, slot: int, trace: Trace, state: BufferState) -> WaterBounds:
    if not w > 0:
        raise InvalidArgumentError("trial water level must be positive")
    fut_h, fut_b, gains = _window(slot, trace, state)
    counts = np.arange(1.0, len(gains) + 1.0)
    clipped = np.minimum(1.0 / gains, w)
    m_e = np.cumsum(clipped)
    m_b = np.cumsum(np.log2(clipped))
    e_num = state.energy + np.concatenate(([0.0], np.cumsum(fut_h)))
    w_energy = float(np.min((e_num + m_e) / counts))
    if math.isinf(state.data):
        w_data = math.inf
    else:
        b_num = state.data + np.concatenate(([0.0], np.cumsum(fut_b)))
        log_w = float(np.min((b_num + 0.5 * m_b) / (0.5 * counts)))
        w_data = math.inf if log_w > 1000.0 else 2.0 ** log_w
    return WaterBounds(w_energy, w_data, m_e, m_b)


def _general_slot_map(slot, trace, state, f):
    """Lean ``D(w) = min(w_energy, w_data) - w`` for the general bounds."""
    fut_h, fut_b, gains = _window(slot, trace, state)
    counts = np.arange(1.0, len(gains) + 1.0)
    e_num = state.energy + np.concatenate(([0.0], np.cumsum(fut_h)))
    data_limited = not math.isinf(state.data)
    b_num = state.data + np.concatenate(([0.0], np.cumsum(fut_b)))
    scale = f.water_scale * gains
    act = f.activation * gains

    def D(w):
        on = w * act > 1.0
        level = np.where(on, f.inverse_marginal(1.0 / (scale * w)), 1.0)
        rho = np.maximum(level - 1.0, 0.0) / gains
        te = np.min((e_num + np.cumsum(w - rho)) / counts)
        if data_limited:
            tb = np.min((b_num + np.cumsum(w - f.eval(1.0 + rho * gains))) / counts)
            te = min(te, tb)
        return float(te) - w

    return D


def seed_water(slot: int, trace: Trace, state: BufferState,
               f: Optional[RateFunction] = None) -> float:
    """Upper starting point ``w_max`` for the descending iteration."""
    fut_h, _, gains = _window(slot, trace, state)
    budget = state.energy + float(np.sum(fut_h))
    top = float(np.max(1.0 / gains))
    if f is None:
        return budget + top
    return float(water_from_power(budget, float(np.max(gains)), f)) + top


def fixed_point_water(slot: int, trace: Trace, state: BufferState, mode="log",
                      tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                      accelerate: bool = True):
    """Optimal water level of ``slot`` given the buffers in ``state``.

    ``mode`` is ``"log"`` or a :class:`RateFunction` for the general bounds.
    Returns ``(w, FixedPointLog)``; raises :class:`NonConvergenceError`.
    """
    if tol <= 0:
        raise InvalidArgumentError("tol must be positive")
    if mode == "log":
        def D(w):
            return water_bounds_log(w, slot, trace, state).w - w
        seed = seed_water(slot, trace, state)
    else:
        D = _general_slot_map(slot, trace, state, mode)
        seed = seed_water(slot, trace, state, mode)
    w, its, ok, res = kernels.fixed_point(D, seed, tol, max_iter, accelerate)
    log = FixedPointLog(tuple(its), ok, res)
    if not ok:
        raise NonConvergenceError(
            f"slot {slot}: no fixed point within {max_iter} iterations (residual {res:.3g})",
            w, res)
    return w, log


def _decide(w: float, state: BufferState, f: RateFunction) -> SlotDecision:
    rho = min(float(power_from_water(w, state.gain, f)), state.energy)
    r = float(rate_of_power(rho, state.gain, f))
    if r > state.data:
        rho = min(rho, power_for_rate(state.data, state.gain, f))
        r = min(float(rate_of_power(rho, state.gain, f)), state.data)
    return SlotDecision(float(w), rho, r)


@dataclass(frozen=True)
class OfflineResult:
    schedule: Schedule
    residuals: np.ndarray
    iterations: np.ndarray


def solve_offline_detailed(trace: Trace, e_1: float, b_1: float, mode="log",
                           tol: float = DEFAULT_TOL,
                           max_iter: int = DEFAULT_MAX_ITER) -> OfflineResult:
    args = (float(e_1), float(b_1), trace.harvests, trace.arrivals, trace.gains)
    if mode == "log" or getattr(mode, "kernel", None):
        if mode == "log":
            out = kernels.solve_log_trace(*args, tol, max_iter, True, -1)
        else:
            out = kernels.solve_general_trace(*args, mode.kernel, tol, max_iter, True, -1)
        water, power, rate, iters, resid, conv = out
        if not np.all(conv):
            bad = int(np.argmin(conv))
            raise NonConvergenceError(
                f"slot {bad + 1}: no fixed point within {max_iter} iterations",
                float(water[bad]), float(resid[bad]))
        return OfflineResult(Schedule(water, power, rate), resid, iters)
    if not isinstance(mode, RateFunction):
        raise InvalidArgumentError(f"unknown mode {mode!r}")
    state = BufferState(float(e_1), float(b_1), float(trace.gains[0]), 1)
    decisions, resid, iters = [], [], []
    n = trace.n_slots
    for slot in range(1, n + 1):
        w, log = fixed_point_water(slot, trace, state, mode, tol, max_iter)
        d = _decide(w, state, mode)
        decisions.append(d)
        resid.append(log.residual)
        iters.append(log.iterations_used)
        if slot < n:
            state = BufferState(
                max(state.energy - d.power, 0.0) + trace.harvests[slot],
                max(state.data - d.rate, 0.0) + trace.arrivals[slot],
                float(trace.gains[slot]), slot + 1)
    return OfflineResult(Schedule.from_decisions(decisions), np.array(resid), np.array(iters))


def solve_offline(trace: Trace, e_1: float, b_1: float, mode="log",
                  tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> Schedule:
    """Slot-by-slot optimal schedule for a known trace."""
    return solve_offline_detailed(trace, e_1, b_1, mode, tol, max_iter).schedule


def offline_total(trace: Trace, e_1: float, b_1: float) -> float:
    """Optimal total throughput (half-log2 rate) from buffers ``e_1, b_1``."""
    return solve_offline(trace, e_1, b_1).total_throughput


def first_slot_water(trace: Trace, e_1: float, b_1: float, tol: float = DEFAULT_TOL,
                     max_iter: int = DEFAULT_MAX_ITER) -> float:
    water, _, _, _, resid, conv = kernels.solve_log_trace(
        float(e_1), float(b_1), trace.harvests, trace.arrivals, trace.gains,
        tol, max_iter, True, 1)
    if not conv[0]:
        raise NonConvergenceError("slot 1: no fixed point", float(water[0]), float(resid[0]))
    return float(water[0])


BRUTE_FORCE_MAX_SLOTS = 6
BRUTE_FORCE_MAX_GRID = 64
BRUTE_FORCE_MAX_LEAVES = 20_000_000


def brute_force_offline(trace: Trace, e_1: float, b_1: float, grid_points: int = 33,
                        mode=None) -> Schedule:
    """Exhaustive search over per-slot power grids.

    Slot ``n`` chooses among ``grid_points`` powers evenly spanning
    ``[0, p_max]``, where ``p_max`` is the largest power both buffers allow.
    The last slot always takes ``p_max`` since rate is increasing.
    """
    f = log_rate() if mode in (None, "log") else mode
    n = trace.n_slots
    if n > BRUTE_FORCE_MAX_SLOTS:
        raise ResourceCapError(f"brute force limited to N <= {BRUTE_FORCE_MAX_SLOTS}, got {n}")
    if not 2 <= grid_points <= BRUTE_FORCE_MAX_GRID:
        raise ResourceCapError(f"grid_points must be in 2..{BRUTE_FORCE_MAX_GRID}")
    if grid_points ** (n - 1) > BRUTE_FORCE_MAX_LEAVES:
        raise ResourceCapError(
            f"brute force would enumerate {grid_points ** (n - 1)} schedules",
            grid_points ** (n - 1))
    frac = np.linspace(0.0, 1.0, grid_points)
    e = np.array([float(e_1)])
    b = np.array([float(b_1)])
    total = np.zeros(1)
    history = []  # per slot: (parent index, power, rate)
    for i in range(n):
        g = float(trace.gains[i])
        with np.errstate(over="ignore"):
            cap = np.minimum(e, np.maximum(f.inverse(b) - 1.0, 0.0) / g)
        if i == n - 1:
            p = cap[:, None]
        else:
            p = cap[:, None] * frac[None, :]
        r = f.eval(1.0 + p * g)
        r = np.minimum(r, b[:, None])
        parent = np.repeat(np.arange(len(e)), p.shape[1])
        p, r = p.reshape(-1), r.reshape(-1)
        history.append((parent, p, r))
        total = total[parent] + r
        if i < n - 1:
            e = np.maximum(e[parent] - p, 0.0) + trace.harvests[i + 1]
            b = np.maximum(b[parent] - r, 0.0) + trace.arrivals[i + 1]
    best = int(np.argmax(total))
    powers, rates = [], []
    for parent, p, r in reversed(history):
        powers.append(p[best])
        rates.append(r[best])
        best = parent[best]
    powers.reverse()
    rates.reverse()
    water = [float(water_from_power(p, g, f)) for p, g in zip(powers, trace.gains)]
    return Schedule(water, powers, rates)


def grid_step_bound(trace: Trace, e_1: float, grid_points: int, f: Optional[RateFunction] = None
                    ) -> float:
    """Largest throughput one power-grid step can change, over all slots."""
    f = f or log_rate()
    step = (float(e_1) + float(np.sum(trace.harvests[1:]))) / (grid_points - 1)
    gmax = float(np.max(trace.gains))
    return float(f.marginal(1.0)) * gmax * step
