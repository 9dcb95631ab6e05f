"""Exogenous process models (harvests, arrivals, channel) and seeded sampling.

Every component is a small finite Markov chain with a value attached to each
state: a constant is a one-state chain, Bernoulli and IID draws are chains
whose rows coincide.  This lets the DP, exact enumeration and continuation
sampling treat all components the same way.

Random streams use Philox keyed by ``SeedSequence(seed, spawn_key=(stream, *path))``
so any (replicate, slot) substream can be regenerated independently.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from .core import Trace
from .errors import InvalidArgumentError

ROW_TOL = 1e-12


def _prob(p, what):
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise InvalidArgumentError(f"{what} must lie in [0, 1], got {p}")
    return p


@dataclass(frozen=True)
class Constant:
    value: float

    def __post_init__(self):
        if not self.value >= 0:
            raise InvalidArgumentError("constant value must be non-negative")

    def chain(self):
        return np.ones((1, 1)), np.array([float(self.value)]), np.ones(1)

    def to_dict(self):
        return {"kind": "constant", "value": self.value}


@dataclass(frozen=True)
class Bernoulli:
    """``value`` with probability ``p``, else 0, independently per slot."""

    p: float
    value: float

    def __post_init__(self):
        _prob(self.p, "p")
        if not self.value >= 0:
            raise InvalidArgumentError("Bernoulli value must be non-negative")

    def chain(self):
        row = np.array([1.0 - self.p, self.p])
        return np.vstack([row, row]), np.array([0.0, float(self.value)]), row.copy()

    def to_dict(self):
        return {"kind": "bernoulli", "p": self.p, "value": self.value}


@dataclass(frozen=True)
class IIDTwoState:
    """Independent draws of ``values[i]`` with probability ``probs[i]``."""

    values: Tuple[float, float]
    probs: Tuple[float, float] = (0.5, 0.5)

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "probs", tuple(_prob(p, "probs") for p in self.probs))
        if len(self.values) != 2 or len(self.probs) != 2:
            raise InvalidArgumentError("two values and two probabilities required")
        if abs(sum(self.probs) - 1.0) > ROW_TOL:
            raise InvalidArgumentError("probabilities must sum to 1")
        if min(self.values) < 0:
            raise InvalidArgumentError("values must be non-negative")

    def chain(self):
        row = np.array(self.probs)
        return np.vstack([row, row]), np.array(self.values), row.copy()

    def to_dict(self):
        return {"kind": "iid", "values": list(self.values), "probs": list(self.probs)}


@dataclass(frozen=True)
class TwoStateDTMC:
    """Two-state Markov chain; ``transition[i][j] = Pr(next = j | now = i)``.

    Starts from the stationary law unless ``initial_state`` pins it.
    """

    transition: Tuple[Tuple[float, float], Tuple[float, float]]
    values: Tuple[float, float]
    initial_state: Optional[int] = None

    def __post_init__(self):
        t = tuple(tuple(_prob(x, "transition entry") for x in row) for row in self.transition)
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(t) != 2 or any(len(r) != 2 for r in t) or len(self.values) != 2:
            raise InvalidArgumentError("a two-state chain needs a 2x2 matrix and two values")
        if any(abs(sum(r) - 1.0) > ROW_TOL for r in t):
            raise InvalidArgumentError("transition rows must sum to 1")
        if min(self.values) < 0:
            raise InvalidArgumentError("values must be non-negative")
        if self.initial_state not in (None, 0, 1):
            raise InvalidArgumentError("initial_state must be 0, 1 or None")

    @property
    def stationary(self) -> np.ndarray:
        q01, q10 = self.transition[0][1], self.transition[1][0]
        if q01 + q10 == 0.0:
            raise InvalidArgumentError("reducible chain has no unique stationary law")
        pi1 = q01 / (q01 + q10)
        return np.array([1.0 - pi1, pi1])

    def chain(self):
        if self.initial_state is None:
            init = self.stationary
        else:
            init = np.zeros(2)
            init[self.initial_state] = 1.0
        return np.array(self.transition, dtype=float), np.array(self.values), init

    def to_dict(self):
        return {"kind": "dtmc", "transition": [list(r) for r in self.transition],
                "values": list(self.values), "initial_state": self.initial_state}


Component = Union[Constant, Bernoulli, IIDTwoState, TwoStateDTMC]


def component_from_dict(d: dict) -> Component:
    kind = d.get("kind")
    try:
        if kind == "constant":
            return Constant(d["value"])
        if kind == "bernoulli":
            return Bernoulli(d["p"], d["value"])
        if kind == "iid":
            return IIDTwoState(tuple(d["values"]), tuple(d.get("probs", (0.5, 0.5))))
        if kind == "dtmc":
            return TwoStateDTMC(tuple(tuple(r) for r in d["transition"]), tuple(d["values"]),
                                d.get("initial_state"))
    except KeyError as exc:
        raise InvalidArgumentError(f"component {kind!r} is missing key {exc}") from None
    raise InvalidArgumentError(f"unknown component kind {kind!r}")


def stationary_mean(component: Component) -> float:
    """Long-run expected per-slot value of a component."""
    if isinstance(component, Constant):
        return float(component.value)
    if isinstance(component, Bernoulli):
        return component.p * component.value
    if isinstance(component, IIDTwoState):
        return float(np.dot(component.probs, component.values))
    if isinstance(component, TwoStateDTMC):
        return float(np.dot(component.stationary, component.values))
    raise InvalidArgumentError(f"not a process component: {component!r}")


@dataclass(frozen=True)
class ScenarioModel:
    """Distribution of the three exogenous processes over ``horizon`` slots.

    ``initial_energy``/``initial_data`` override ``e_1``/``b_1``; by default
    the buffers start with the slot-1 harvest and arrival.
    """

    harvest: Component
    arrival: Component
    channel: Component
    horizon: int
    slot_duration: float = 1e-3
    initial_energy: Optional[float] = None
    initial_data: Optional[float] = None
    name: str = "custom"

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise InvalidArgumentError("horizon must be a positive integer")
        object.__setattr__(self, "horizon", int(self.horizon))
        _, g, _ = self.channel.chain()
        if np.any(g <= 0) or not np.all(np.isfinite(g)):
            raise InvalidArgumentError("channel gains must be finite and positive")
        if not self.slot_duration > 0:
            raise InvalidArgumentError("slot_duration must be positive")
        for v in (self.initial_energy, self.initial_data):
            if v is not None and not v >= 0:
                raise InvalidArgumentError("initial buffers must be non-negative")

    @property
    def components(self):
        return (self.harvest, self.arrival, self.channel)

    def with_horizon(self, horizon: int) -> "ScenarioModel":
        return ScenarioModel(self.harvest, self.arrival, self.channel, horizon,
                             self.slot_duration, self.initial_energy, self.initial_data, self.name)

    def initial_buffers(self, trace: Trace):
        e = float(trace.harvests[0]) if self.initial_energy is None else float(self.initial_energy)
        b = float(trace.arrivals[0]) if self.initial_data is None else float(self.initial_data)
        return e, b

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "horizon": self.horizon,
            "slot_duration": self.slot_duration,
            "initial_energy": self.initial_energy,
            "initial_data": self.initial_data,
            "harvest": self.harvest.to_dict(),
            "arrival": self.arrival.to_dict(),
            "channel": self.channel.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioModel":
        try:
            return cls(
                harvest=component_from_dict(d["harvest"]),
                arrival=component_from_dict(d["arrival"]),
                channel=component_from_dict(d["channel"]),
                horizon=d["horizon"],
                slot_duration=d.get("slot_duration", 1e-3),
                initial_energy=d.get("initial_energy"),
                initial_data=d.get("initial_data"),
                name=d.get("name", "custom"),
            )
        except KeyError as exc:
            raise InvalidArgumentError(f"scenario is missing key {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioModel":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ExogenousChain:
    """Product chain of the three components.

    State ``s`` indexes (harvest, arrival, channel) states in row-major order;
    ``harvest[s]``, ``arrival[s]``, ``gain[s]`` are the values it emits.
    """

    transition: np.ndarray
    initial: np.ndarray
    harvest: np.ndarray
    arrival: np.ndarray
    gain: np.ndarray
    parts: tuple = field(repr=False)

    @property
    def n_states(self) -> int:
        return len(self.initial)

    def state_of(self, harvest: float, arrival: float, gain: float) -> int:
        """Product state emitting the observed values.

        When several states emit the same values (a chain whose two states
        share a value) the first match is returned.
        """
        hit = np.flatnonzero((self.harvest == harvest) & (self.arrival == arrival)
                             & (self.gain == gain))
        if len(hit) == 0:
            raise InvalidArgumentError(
                f"observation ({harvest}, {arrival}, {gain}) is impossible under the model")
        return int(hit[0])


def exogenous_chain(model: ScenarioModel) -> ExogenousChain:
    parts = [c.chain() for c in model.components]
    P = parts[0][0]
    init = parts[0][2]
    for T, _, i0 in parts[1:]:
        P = np.kron(P, T)
        init = np.kron(init, i0)
    sizes = [len(p[1]) for p in parts]
    idx = np.array(list(itertools.product(*[range(k) for k in sizes])))
    vals = [parts[c][1][idx[:, c]] for c in range(3)]
    return ExogenousChain(P, init, vals[0], vals[1], vals[2], tuple(parts))


@dataclass(frozen=True)
class RngStream:
    """Reproducible substream ``(seed, stream_id, *path)``."""

    seed: int
    stream_id: int = 0
    path: tuple = ()

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0 or any(k < 0 for k in self.path):
            raise InvalidArgumentError("seed, stream_id and path keys must be non-negative")

    def child(self, *keys: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, self.path + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id), *self.path))
        return np.random.Generator(np.random.Philox(ss))


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise InvalidArgumentError("rng must be an RngStream or numpy Generator")


def _sample_states(T, init, n, gen, start=None):
    """State path of length ``n``; from ``init`` or, given ``start``, its successors."""
    u = gen.random(n)
    if np.all(T == T[0]):
        return np.minimum(np.searchsorted(np.cumsum(T[0]), u, side="right"), len(T) - 1)
    cum = np.cumsum(T, axis=1)
    out = np.empty(n, dtype=np.int64)
    k = len(T) - 1
    s = start
    for t in range(n):
        if s is None:
            s = min(int(np.searchsorted(np.cumsum(init), u[t], side="right")), k)
        else:
            s = min(int(np.searchsorted(cum[s], u[t], side="right")), k)
        out[t] = s
    return out


def _component_path(comp, n, gen, start=None):
    T, vals, init = comp.chain()
    return vals[_sample_states(T, init, n, gen, start)]


def sample_trace(model: ScenarioModel, rng, horizon: Optional[int] = None) -> Trace:
    """Draw one realization; components use independent sub-draws in a fixed order."""
    gen = _as_generator(rng)
    n = model.horizon if horizon is None else int(horizon)
    h = _component_path(model.harvest, n, gen)
    b = _component_path(model.arrival, n, gen)
    g = _component_path(model.channel, n, gen)
    return Trace(h, b, g)


def component_state(comp: Component, value: float) -> int:
    _, vals, _ = comp.chain()
    hit = np.flatnonzero(vals == value)
    if len(hit) == 0:
        raise InvalidArgumentError(f"value {value} cannot be emitted by {comp!r}")
    return int(hit[0])


def sample_continuation(model: ScenarioModel, observed: Tuple[float, float, float], length: int,
                        rng) -> Trace:
    """Slots after the current one, given the current observation ``(H, B, gain)``.

    Returns a trace of ``length + 1`` slots whose first slot is the observation.
    """
    gen = _as_generator(rng)
    cols = []
    for comp, v in zip(model.components, observed):
        s = component_state(comp, v)
        cols.append(np.concatenate(([v], _component_path(comp, length, gen, start=s)))
                    if length > 0 else np.array([v], dtype=float))
    return Trace(*cols)


def sample_paths(component: Component, start_value: Optional[float], replicates: int,
                 length: int, rng) -> np.ndarray:
    """``(replicates, length)`` value paths of one component.

    With ``start_value`` the paths continue from the state emitting it;
    otherwise they start from the component's initial law.
    """
    gen = _as_generator(rng)
    T, vals, init = component.chain()
    if length == 0:
        return np.zeros((replicates, 0))
    u = gen.random((replicates, length))
    if np.all(T == T[0]):
        idx = np.searchsorted(np.cumsum(T[0]), u, side="right")
        return vals[np.minimum(idx, len(vals) - 1)]
    cum = np.cumsum(T, axis=1)
    out = np.empty((replicates, length), dtype=np.int64)
    if start_value is None:
        s = np.minimum(np.searchsorted(np.cumsum(init), u[:, 0], side="right"), len(vals) - 1)
    else:
        s0 = component_state(component, start_value)
        s = np.minimum(np.searchsorted(cum[s0], u[:, 0], side="right"), len(vals) - 1)
    out[:, 0] = s
    for t in range(1, length):
        s = np.minimum((u[:, t, None] >= cum[s]).sum(axis=1), len(vals) - 1)
        out[:, t] = s
    return vals[out]


DTMC_ARRIVALS = ((0.9, 0.1), (0.58, 0.42))
PACKET_UNITS = 80_000.0  # 10 KB packets, counted in bits


def paper_scenario(name: str) -> ScenarioModel:
    """Named scenarios of the numerical study."""
    arrivals = TwoStateDTMC(DTMC_ARRIVALS, (0.0, PACKET_UNITS))
    channel = IIDTwoState((30.0, 12.0), (0.5, 0.5))
    if name == "main":
        return ScenarioModel(Bernoulli(0.5, 50.0), arrivals, channel, 100, name=name)
    if name == "memory-harvest":
        return ScenarioModel(TwoStateDTMC(((0.9, 0.1), (0.1, 0.9)), (0.0, 50.0)),
                             arrivals, channel, 100, name=name)
    if name == "power-halving-comparison":
        return ScenarioModel(Bernoulli(0.1, 90.0), arrivals, channel, 100, name=name)
    if name == "cdf-figure":
        return ScenarioModel(Bernoulli(0.45, 180.0), Constant(0.0), Constant(1.0), 100,
                             initial_energy=88.0, initial_data=math.inf, name=name)
    raise InvalidArgumentError(
        f"unknown scenario {name!r}; choose from {', '.join(PAPER_SCENARIOS)}")


PAPER_SCENARIOS = ("main", "memory-harvest", "power-halving-comparison", "cdf-figure")
