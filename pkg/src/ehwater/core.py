"""Domain types, rate functions, water/power conversions and buffer accounting.

Conventions
-----------
Slots are numbered ``1..N``.  ``e_n`` and ``b_n`` are the buffer contents at
the start of slot ``n`` and already include ``H_n`` and ``B_n``; the first
entries of a trace are therefore folded into ``e_1``/``b_1`` by the caller.
After slot ``n`` the buffers evolve as::

    e_{n+1} = e_n - rho_n + H_{n+1}
    b_{n+1} = b_n - r_n   + B_{n+1}

A water level ``w`` maps to power through the inverse marginal of the rate
function.  Each :class:`RateFunction` carries a ``water_scale`` ``c`` so that
``rho = (1/g) [ (f')^{-1}(1 / (c w g)) - 1 ]^+``.  The half-log2 rate uses
``c = 2 ln 2``, which turns the map into ``rho = [w - 1/g]^+``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InfeasibleDecisionError, InvalidArgumentError

FEASIBILITY_TOL = 1e-9

LN2 = math.log(2.0)


@dataclass(frozen=True)
class RateFunction:
    """Concave throughput map ``f`` with its marginal and inverse marginal.

    ``eval``, ``marginal`` and ``inverse_marginal`` must accept numpy arrays.
    ``inverse`` (``f^{-1}``) is optional and only used to shave a rate-capped
    decision back to the exact data limit.  ``kernel`` names a compiled
    specialisation (``"log"``, ``"ln"``, ``"sqrt"``); custom functions leave it
    unset and run the general bounds in Python.
    """

    name: str
    eval: Callable
    marginal: Callable
    inverse_marginal: Callable
    water_scale: float = 1.0
    inverse: Optional[Callable] = None
    kernel: Optional[str] = None

    @property
    def activation(self) -> float:
        """``c * f'(1)``; a slot transmits iff ``w * gain * activation > 1``."""
        return self.water_scale * float(self.marginal(1.0))


def log_rate() -> RateFunction:
    """``f(x) = 1/2 log2(x)`` in the rescaled water convention."""
    return RateFunction(
        name="log",
        eval=lambda x: 0.5 * np.log2(x),
        marginal=lambda x: 1.0 / (2.0 * LN2 * np.asarray(x, dtype=float)),
        inverse_marginal=lambda y: 1.0 / (2.0 * LN2 * np.asarray(y, dtype=float)),
        water_scale=2.0 * LN2,
        inverse=lambda r: np.exp2(2.0 * np.asarray(r, dtype=float)),
        kernel="log",
    )


def natural_log_rate() -> RateFunction:
    """``f(x) = ln(x)``; water levels need no rescaling (``c = 1``)."""
    return RateFunction(
        name="ln",
        eval=np.log,
        marginal=lambda x: 1.0 / np.asarray(x, dtype=float),
        inverse_marginal=lambda y: 1.0 / np.asarray(y, dtype=float),
        inverse=np.exp,
        kernel="ln",
    )


def sqrt_rate() -> RateFunction:
    """``f(x) = 2 (sqrt(x) - 1)``, a non-logarithmic concave test case."""
    return RateFunction(
        name="sqrt",
        eval=lambda x: 2.0 * (np.sqrt(x) - 1.0),
        marginal=lambda x: 1.0 / np.sqrt(x),
        inverse_marginal=lambda y: 1.0 / np.square(np.asarray(y, dtype=float)),
        inverse=lambda r: np.square(np.asarray(r, dtype=float) / 2.0 + 1.0),
        kernel="sqrt",
    )


RATE_FUNCTIONS = {"log": log_rate, "ln": natural_log_rate, "sqrt": sqrt_rate}


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError(f"non-finite input: {v!r}")


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def power_from_water(w, gain, f: RateFunction):
    """Power ``rho`` produced by water level ``w`` on a slot with ``gain``."""
    _check_finite(w, gain)
    w = np.asarray(w, dtype=float)
    gain = np.asarray(gain, dtype=float)
    if np.any(w < 0) or np.any(gain <= 0):
        raise InvalidArgumentError("need w >= 0 and gain > 0")
    active = w * gain * f.activation > 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.where(active, 1.0 / (f.water_scale * np.where(active, w, 1.0) * gain), 1.0)
        level = np.where(active, f.inverse_marginal(y), 1.0)
    return _scalar_or_array(np.maximum(level - 1.0, 0.0) / gain)


def water_from_power(rho, gain, f: RateFunction):
    """Water level that produces ``rho``; ``rho = 0`` maps to the threshold."""
    _check_finite(rho, gain)
    rho = np.asarray(rho, dtype=float)
    gain = np.asarray(gain, dtype=float)
    if np.any(rho < 0) or np.any(gain <= 0):
        raise InvalidArgumentError("need rho >= 0 and gain > 0")
    w = 1.0 / (f.water_scale * gain * f.marginal(1.0 + rho * gain))
    return _scalar_or_array(w)


def rate_of(w, gain, f: RateFunction):
    """Per-slot rate ``f(1 + rho(w) gain)``."""
    rho = power_from_water(w, gain, f)
    return _scalar_or_array(f.eval(1.0 + np.asarray(rho) * gain))


def rate_of_power(rho, gain, f: RateFunction):
    return _scalar_or_array(f.eval(1.0 + np.asarray(rho, dtype=float) * gain))


def power_for_rate(r, gain, f: RateFunction) -> float:
    """Smallest power reaching rate ``r``; needs ``f.inverse``."""
    if f.inverse is None:
        raise InvalidArgumentError(f"rate function {f.name!r} has no inverse")
    if r <= 0:
        return 0.0
    if math.isinf(r):
        return math.inf
    with np.errstate(over="ignore"):
        level = float(f.inverse(r))
    return max(level - 1.0, 0.0) / gain


@dataclass(frozen=True)
class Trace:
    """Realized harvests ``H``, arrivals ``B`` and channel gains over N slots."""

    harvests: np.ndarray
    arrivals: np.ndarray
    gains: np.ndarray

    def __post_init__(self):
        arrays = []
        for name in ("harvests", "arrivals", "gains"):
            a = np.array(getattr(self, name), dtype=float).reshape(-1)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
            arrays.append(a)
        n = len(arrays[0])
        if n < 1 or any(len(a) != n for a in arrays):
            raise InvalidArgumentError("harvests, arrivals and gains need equal length >= 1")
        if np.any(np.isnan(self.harvests)) or np.any(self.harvests < 0):
            raise InvalidArgumentError("harvests must be non-negative")
        if np.any(np.isnan(self.arrivals)) or np.any(self.arrivals < 0):
            raise InvalidArgumentError("arrivals must be non-negative")
        if not np.all(np.isfinite(self.gains)) or np.any(self.gains <= 0):
            raise InvalidArgumentError("gains must be finite and positive")

    @property
    def n_slots(self) -> int:
        return len(self.gains)

    def tail(self, start: int) -> "Trace":
        """Trace restricted to slots ``start..N`` (1-based)."""
        i = start - 1
        return Trace(self.harvests[i:], self.arrivals[i:], self.gains[i:])

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            np.array_equal(self.harvests, other.harvests)
            and np.array_equal(self.arrivals, other.arrivals)
            and np.array_equal(self.gains, other.gains)
        )

    __hash__ = None


@dataclass(frozen=True)
class BufferState:
    energy: float
    data: float
    gain: float
    slot: int = 1

    def __post_init__(self):
        if not (self.energy >= 0 and self.data >= 0):
            raise InvalidArgumentError(f"negative buffer: {self}")
        if not (self.gain > 0 and math.isfinite(self.gain)):
            raise InvalidArgumentError(f"gain must be positive: {self.gain}")


@dataclass(frozen=True)
class SlotDecision:
    water: float
    power: float
    rate: float

    @classmethod
    def from_water(cls, w, gain, f: RateFunction) -> "SlotDecision":
        rho = power_from_water(w, gain, f)
        return cls(float(w), rho, float(rate_of_power(rho, gain, f)))

    @classmethod
    def from_power(cls, rho, gain, f: RateFunction) -> "SlotDecision":
        rho = float(rho)
        return cls(float(water_from_power(rho, gain, f)), rho, float(rate_of_power(rho, gain, f)))


ZERO_DECISION = SlotDecision(0.0, 0.0, 0.0)


def clamp_decision(rho: float, state: BufferState, f: RateFunction) -> SlotDecision:
    """Decision spending ``rho`` reduced to what both buffers allow."""
    rho = min(max(float(rho), 0.0), state.energy)
    rate = float(rate_of_power(rho, state.gain, f))
    if rate > state.data:
        rho = min(rho, power_for_rate(state.data, state.gain, f))
        rate = min(float(rate_of_power(rho, state.gain, f)), state.data)
    if rho <= 0.0:
        return SlotDecision(float(water_from_power(0.0, state.gain, f)), 0.0, 0.0)
    return SlotDecision(float(water_from_power(rho, state.gain, f)), rho, rate)


@dataclass(frozen=True)
class Schedule:
    """Per-slot water levels with derived power and rate."""

    water: np.ndarray
    power: np.ndarray
    rate: np.ndarray
    total_throughput: float = field(init=False)
    total_energy: float = field(init=False)

    def __post_init__(self):
        for name in ("water", "power", "rate"):
            a = np.array(getattr(self, name), dtype=float).reshape(-1)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if not (len(self.water) == len(self.power) == len(self.rate)):
            raise InvalidArgumentError("schedule columns differ in length")
        object.__setattr__(self, "total_throughput", math.fsum(self.rate))
        object.__setattr__(self, "total_energy", math.fsum(self.power))

    @classmethod
    def from_decisions(cls, decisions: Sequence[SlotDecision]) -> "Schedule":
        return cls(
            [d.water for d in decisions],
            [d.power for d in decisions],
            [d.rate for d in decisions],
        )

    @property
    def n_slots(self) -> int:
        return len(self.power)

    @property
    def decisions(self) -> list:
        return [SlotDecision(*t) for t in zip(self.water, self.power, self.rate)]


def apply_slot(
    state: BufferState,
    decision: SlotDecision,
    next_harvest: float,
    next_arrival: float,
    next_gain: float,
    tol: float = FEASIBILITY_TOL,
) -> BufferState:
    """Advance both buffers by one slot."""
    e_deficit = decision.power - state.energy
    if e_deficit > tol:
        raise InfeasibleDecisionError(
            f"slot {state.slot}: power {decision.power} exceeds energy {state.energy}",
            "energy-causality",
            e_deficit,
        )
    b_deficit = decision.rate - state.data
    if b_deficit > tol:
        raise InfeasibleDecisionError(
            f"slot {state.slot}: rate {decision.rate} exceeds data {state.data}",
            "data-causality",
            b_deficit,
        )
    energy = max(state.energy - decision.power, 0.0) + next_harvest
    data = max(state.data - decision.rate, 0.0) + next_arrival
    return BufferState(energy, data, next_gain, state.slot + 1)


@dataclass(frozen=True)
class FeasibilityReport:
    violations: tuple = ()

    @property
    def feasible(self) -> bool:
        return not self.violations


def _check_lengths(trace: Trace, schedule: Schedule):
    if schedule.n_slots != trace.n_slots:
        raise InvalidArgumentError(
            f"schedule has {schedule.n_slots} slots, trace has {trace.n_slots}"
        )


def check_feasibility(
    trace: Trace, schedule: Schedule, e_1: float, b_1: float, tol: float = FEASIBILITY_TOL
) -> FeasibilityReport:
    """Forward-simulate the causality constraints and list every violated slot.

    Buffers are carried unclamped, so a deficit keeps being reported at later
    slots until harvests/arrivals repay it.
    """
    _check_lengths(trace, schedule)
    violations = []
    e, b = float(e_1), float(b_1)
    n = trace.n_slots
    for i in range(n):
        if schedule.power[i] - e > tol:
            violations.append((i + 1, "energy-causality", float(schedule.power[i] - e)))
        if schedule.rate[i] - b > tol:
            violations.append((i + 1, "data-causality", float(schedule.rate[i] - b)))
        e -= schedule.power[i]
        b -= schedule.rate[i]
        if i + 1 < n:
            e += trace.harvests[i + 1]
            b += trace.arrivals[i + 1]
    return FeasibilityReport(tuple(violations))


def check_feasibility_windows(
    trace: Trace, schedule: Schedule, e_1: float, b_1: float, tol: float = FEASIBILITY_TOL
) -> bool:
    """Check every window inequality ``sum rho <= e_n + sum H`` directly.

    Independent of :func:`check_feasibility`; used to cross-check it.
    """
    _check_lengths(trace, schedule)
    n = trace.n_slots
    H = np.concatenate([[e_1], trace.harvests[1:]])
    B = np.concatenate([[b_1], trace.arrivals[1:]])
    for start in range(n):
        e_start = H[: start + 1].sum() - schedule.power[:start].sum()
        b_start = B[: start + 1].sum() - schedule.rate[:start].sum()
        for end in range(start, n):
            spent = schedule.power[start : end + 1].sum()
            sent = schedule.rate[start : end + 1].sum()
            if spent > e_start + H[start + 1 : end + 1].sum() + tol:
                return False
            if sent > b_start + B[start + 1 : end + 1].sum() + tol:
                return False
    return True


def final_buffers(trace: Trace, schedule: Schedule, e_1: float, b_1: float):
    """Buffer contents after slot N, by direct accumulation."""
    e = e_1 + math.fsum(trace.harvests[1:]) - schedule.total_energy
    b = b_1 + math.fsum(trace.arrivals[1:]) - schedule.total_throughput
    return e, b
