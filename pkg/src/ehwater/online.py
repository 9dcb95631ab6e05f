"""Online policies, forward simulation and a discretized finite-horizon DP.

All policies use the half-log2 rate with rescaled water levels, so
``rho = [w - 1/gain]^+`` and ``rate = 1/2 log2(1 + rho gain)``.  A policy
sees a :class:`PolicyContext` built from the trace prefix only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .core import BufferState, Schedule, SlotDecision, Trace, apply_slot
from .errors import InvalidArgumentError, ResourceCapError, UnsupportedPolicyError
from .offline import first_slot_water, solve_offline
from .processes import (
    RngStream,
    ScenarioModel,
    exogenous_chain,
    sample_continuation,
)

DP_TABLE_CAP = 10_000_000


def log_decision(rho: float, energy: float, data: float, gain: float) -> SlotDecision:
    """Spend ``rho`` reduced to what both buffers allow (half-log2 rate)."""
    rho = min(max(float(rho), 0.0), energy)
    rate = 0.5 * math.log2(1.0 + rho * gain)
    if rate > data:
        rho = min(rho, data_power_cap(data, gain))
        rate = min(0.5 * math.log2(1.0 + rho * gain), data)
    return SlotDecision(rho + 1.0 / gain, rho, rate)


def data_power_cap(data: float, gain: float) -> float:
    """Power at which the half-log2 rate reaches ``data``."""
    if 2.0 * data > 1000.0:
        return math.inf
    return (2.0 ** (2.0 * data) - 1.0) / gain


def single_slot_decision(state: BufferState) -> SlotDecision:
    """Largest decision both buffers allow; optimal when no slots remain."""
    return log_decision(state.energy, state.energy, state.data, state.gain)


class RunningStats:
    """Time averages of observed harvests and arrivals plus the gain history."""

    def __init__(self):
        self.n = 0
        self._sum_h = 0.0
        self._sum_b = 0.0
        self._inv_gains = []

    def update(self, harvest: float, arrival: float, gain: float):
        self.n += 1
        self._sum_h += harvest
        self._sum_b += arrival
        self._inv_gains.append(1.0 / gain)

    @property
    def mean_harvest(self) -> float:
        return self._sum_h / self.n

    @property
    def mean_arrival(self) -> float:
        return self._sum_b / self.n

    @property
    def inv_gains(self) -> np.ndarray:
        return np.array(self._inv_gains)

    @property
    def gains(self) -> np.ndarray:
        return 1.0 / self.inv_gains


@dataclass
class PolicyContext:
    state: BufferState
    slot: int
    horizon: int
    stats: RunningStats
    observed: tuple  # (H_n, B_n, gain_n)
    model: Optional[ScenarioModel] = None
    rng: Optional[RngStream] = None


class Policy:
    """Base class; ``decide`` must return a feasible decision."""

    name = "policy"
    online = True
    last_converged = True

    def decide(self, ctx: PolicyContext) -> SlotDecision:
        raise NotImplementedError


HEURISTIC_VARIANTS = ("consistent", "printed")


def heuristic_intercepts(energy: float, data: float, slot: int, horizon: int,
                         mean_harvest: float, mean_arrival: float,
                         variant: str = "consistent"):
    """Energy intercept ``a`` and log2 data intercept ``bt`` of the estimator.

    ``"consistent"`` plugs the running means into the offline min-ratio over
    all ``N - n + 1`` remaining slots:
    ``a = (e - H)/(N - n + 1) + H`` and ``bt = 2(b - B)/(N - n + 1) + 2B``.
    ``"printed"`` uses ``N - n`` and ``+ B`` instead.  Below the mean both
    variants take the single-slot term ``a = e``, ``bt = 2b``.
    """
    if variant not in HEURISTIC_VARIANTS:
        raise InvalidArgumentError(f"unknown heuristic variant {variant!r}")
    printed = variant == "printed"
    left = horizon - slot if printed else horizon - slot + 1
    a = (energy - mean_harvest) / left + mean_harvest if energy >= mean_harvest else energy
    if math.isinf(data):
        bt = math.inf
    elif data >= mean_arrival:
        bt = 2.0 * (data - mean_arrival) / left + (1.0 if printed else 2.0) * mean_arrival
    else:
        bt = 2.0 * data
    return a, bt


def heuristic_decide(ctx: PolicyContext, tol: float = 1e-10, max_iter: int = 200,
                     variant: str = "consistent"):
    """Running-average estimate of the offline water level.

    Returns ``(decision, converged)``; on non-convergence the last iterate is
    used, clamped feasible.  The last slot spends what both buffers allow.
    """
    st = ctx.state
    if ctx.slot >= ctx.horizon:
        return single_slot_decision(st), True
    a, bt = heuristic_intercepts(st.energy, st.data, ctx.slot, ctx.horizon,
                                 ctx.stats.mean_harvest, ctx.stats.mean_arrival, variant)
    w, _, ok = kernels.heuristic_water(st.energy, st.data, a, bt, ctx.stats.inv_gains,
                                       tol, max_iter)
    return log_decision(w - 1.0 / st.gain, st.energy, st.data, st.gain), bool(ok)


def power_halving_decide(ctx: PolicyContext) -> SlotDecision:
    st = ctx.state
    rho = st.energy if ctx.slot >= ctx.horizon else 0.5 * st.energy
    return log_decision(rho, st.energy, st.data, st.gain)


def mean_offline_decide(ctx: PolicyContext, samples: int = 16) -> SlotDecision:
    """Average of the offline water levels over sampled continuations."""
    if ctx.model is None or ctx.rng is None:
        raise UnsupportedPolicyError("mean-offline needs a scenario model and an rng stream")
    st = ctx.state
    left = ctx.horizon - ctx.slot
    if left <= 0:
        return single_slot_decision(st)
    levels = []
    for k in range(samples):
        cont = sample_continuation(ctx.model, ctx.observed, left, ctx.rng.child(ctx.slot, k))
        levels.append(first_slot_water(cont, st.energy, st.data))
    w = math.fsum(levels) / samples
    return log_decision(w - 1.0 / st.gain, st.energy, st.data, st.gain)


class HeuristicPolicy(Policy):
    name = "heuristic"

    def __init__(self, tol: float = 1e-10, max_iter: int = 200, variant: str = "consistent"):
        if variant not in HEURISTIC_VARIANTS:
            raise InvalidArgumentError(f"unknown heuristic variant {variant!r}")
        self.tol, self.max_iter, self.variant = tol, max_iter, variant

    def decide(self, ctx):
        d, self.last_converged = heuristic_decide(ctx, self.tol, self.max_iter, self.variant)
        return d


class PowerHalvingPolicy(Policy):
    name = "power-halving"

    def decide(self, ctx):
        return power_halving_decide(ctx)


class MeanOfflinePolicy(Policy):
    name = "mean-offline"

    def __init__(self, samples: int = 16):
        if samples < 1:
            raise InvalidArgumentError("samples must be >= 1")
        self.samples = samples

    def decide(self, ctx):
        return mean_offline_decide(ctx, self.samples)


class ZeroPolicy(Policy):
    name = "zero"

    def decide(self, ctx):
        return log_decision(0.0, ctx.state.energy, ctx.state.data, ctx.state.gain)


class OfflineReplayPolicy(Policy):
    """Clairvoyant replay of the offline schedule of a known trace."""

    name = "offline"
    online = False

    def __init__(self, trace: Trace, e_1: float, b_1: float):
        self.schedule = solve_offline(trace, e_1, b_1)

    def decide(self, ctx):
        st = ctx.state
        return log_decision(self.schedule.power[ctx.slot - 1], st.energy, st.data, st.gain)


@dataclass
class SimDiagnostics:
    water: np.ndarray
    energy: np.ndarray  # buffer at the start of each slot
    data: np.ndarray
    converged: np.ndarray


def simulate_policy(policy: Policy, trace: Trace, e_1: Optional[float] = None,
                    b_1: Optional[float] = None, model: Optional[ScenarioModel] = None,
                    rng: Optional[RngStream] = None):
    """Run ``policy`` over ``trace``; returns ``(Schedule, SimDiagnostics)``.

    ``e_1``/``b_1`` default to the slot-1 harvest and arrival.  At slot ``n``
    the policy sees only slots ``1..n``.
    """
    n_slots = trace.n_slots
    H, B, G = trace.harvests, trace.arrivals, trace.gains
    e = float(H[0]) if e_1 is None else float(e_1)
    b = float(B[0]) if b_1 is None else float(b_1)
    state = BufferState(e, b, float(G[0]), 1)
    stats = RunningStats()
    decisions = []
    energy, data, conv = np.zeros(n_slots), np.zeros(n_slots), np.ones(n_slots, dtype=bool)
    for i in range(n_slots):
        obs = (float(H[i]), float(B[i]), float(G[i]))
        stats.update(*obs)
        ctx = PolicyContext(state, i + 1, n_slots, stats, obs, model, rng)
        d = policy.decide(ctx)
        decisions.append(d)
        energy[i], data[i] = state.energy, state.data
        conv[i] = policy.last_converged
        if i + 1 < n_slots:
            state = apply_slot(state, d, float(H[i + 1]), float(B[i + 1]), float(G[i + 1]))
        else:
            apply_slot(state, d, 0.0, 0.0, 1.0)
    sched = Schedule.from_decisions(decisions)
    return sched, SimDiagnostics(np.array(sched.water), energy, data, conv)


# ---------------------------------------------------------------- DP


@dataclass
class DpModel:
    """Value and greedy-water tables on a (energy, data, exogenous) grid.

    ``values[n - 1][s, i, j]`` is the value at slot ``n`` with exogenous
    state ``s``, energy ``energy_grid[i]`` and data ``data_grid[j]``.
    A data grid of ``[inf]`` means an always-full data buffer.
    """

    energy_grid: np.ndarray
    data_grid: np.ndarray
    action_levels: int
    chain: object
    horizon: int
    values: list = field(repr=False)
    policy: list = field(repr=False)
    model: Optional[ScenarioModel] = None

    @property
    def data_unbounded(self) -> bool:
        return math.isinf(self.data_grid[0])

    def expected_value(self, e_1: Optional[float] = None, b_1: Optional[float] = None) -> float:
        """Table value at slot 1 averaged over the initial exogenous law."""
        ch = self.chain
        total = 0.0
        for s in range(ch.n_states):
            if ch.initial[s] == 0:
                continue
            e = ch.harvest[s] if e_1 is None else e_1
            b = ch.arrival[s] if b_1 is None else b_1
            i = _snap(np.array([e]), self.energy_grid)[0]
            j = 0 if self.data_unbounded else _snap(np.array([b]), self.data_grid)[0]
            total += ch.initial[s] * self.values[0][s, i, j]
        return float(total)

    def interpolate(self, slot: int, s: int, e, b) -> np.ndarray:
        """Value at slot ``slot`` bilinearly interpolated, clipped at the grid edges."""
        V = self.values[slot - 1][s]
        if self.data_unbounded:
            return np.interp(e, self.energy_grid, V[:, 0])
        ei = _frac_index(e, self.energy_grid)
        bi = _frac_index(b, self.data_grid)
        i0 = np.minimum(np.floor(ei).astype(int), len(self.energy_grid) - 2)
        j0 = np.minimum(np.floor(bi).astype(int), len(self.data_grid) - 2)
        te, tb = ei - i0, bi - j0
        return ((1 - te) * (1 - tb) * V[i0, j0] + te * (1 - tb) * V[i0 + 1, j0]
                + (1 - te) * tb * V[i0, j0 + 1] + te * tb * V[i0 + 1, j0 + 1])


def _frac_index(x, grid):
    step = grid[1] - grid[0]
    return np.clip(np.asarray(x, dtype=float) / step, 0.0, len(grid) - 1.0)


def _snap(x, grid):
    """Index of the nearest grid point at or below ``x`` (clipped to the top)."""
    if len(grid) == 1:
        return np.zeros(np.shape(x), dtype=int)
    step = grid[1] - grid[0]
    idx = np.floor(np.asarray(x) / step + 1e-9).astype(int)
    return np.clip(idx, 0, len(grid) - 1)


def _grid_max(initial, values, horizon):
    top = float(np.max(values))
    start = top if initial is None else float(initial)
    return start + (horizon - 1) * top


def dp_solve(model: ScenarioModel, energy_levels: int = 32, data_levels: int = 32,
             action_levels: int = 32, cap: int = DP_TABLE_CAP) -> DpModel:
    """Backward induction over the product grid.

    Post-decision buffers plus the next harvest/arrival snap down to the
    grid, so table values never credit energy or data that does not exist.
    """
    if min(energy_levels, action_levels) < 2 or data_levels < 1:
        raise InvalidArgumentError("grids need at least two levels")
    ch = exogenous_chain(model)
    N = model.horizon
    data_unbounded = (model.initial_data is not None and math.isinf(model.initial_data)) or \
        bool(np.all(np.isinf(ch.arrival)))
    qb = 1 if data_unbounded else data_levels
    size = N * ch.n_states * energy_levels * qb
    if size > cap:
        raise ResourceCapError(f"DP table needs {size} entries (cap {cap})", size)
    if np.any(np.isinf(ch.harvest)) or (not data_unbounded and np.any(np.isinf(ch.arrival))):
        raise InvalidArgumentError("DP grids need finite harvests and arrivals")
    E = np.linspace(0.0, max(_grid_max(model.initial_energy, ch.harvest, N), 1e-12),
                    energy_levels)
    if data_unbounded:
        Bg = np.array([math.inf])
    else:
        Bg = np.linspace(0.0, max(_grid_max(model.initial_data, ch.arrival, N), 1e-12), qb)

    frac = np.linspace(0.0, 1.0, action_levels)
    S = ch.n_states
    values = [None] * N
    policy = [None] * N
    last = np.empty((S, energy_levels, qb))
    last_w = np.empty_like(last)
    for s in range(S):
        d = _grid_actions(E, Bg, ch.gain[s], np.ones(1))
        last[s] = d[1][..., 0]
        last_w[s] = d[2][..., 0]
    values[N - 1], policy[N - 1] = last, last_w
    for n in range(N - 2, -1, -1):
        nxt = values[n + 1]
        V = np.empty_like(last)
        W = np.empty_like(last)
        for s in range(S):
            g = ch.gain[s]
            rho, rate, water = _grid_actions(E, Bg, g, frac)
            e_post = E[:, None, None] - rho
            b_post = Bg[None, :, None] - rate
            q = rate.copy()
            for s2 in np.flatnonzero(ch.transition[s] > 0):
                ie = _snap(e_post + ch.harvest[s2], E)
                ib = np.zeros_like(ie) if data_unbounded else _snap(b_post + ch.arrival[s2], Bg)
                q += ch.transition[s, s2] * nxt[s2][ie, ib]
            k = np.argmax(q, axis=2)
            V[s], W[s] = _dominate(np.take_along_axis(q, k[..., None], axis=2)[..., 0],
                                   np.take_along_axis(water, k[..., None], axis=2)[..., 0])
        values[n], policy[n] = V, W
    return DpModel(E, Bg, action_levels, ch, N, values, policy, model)


def _dominate(V, W):
    """Running maximum over lower energy and data grid points.

    Each state's action grid scales with its own energy, so a richer state
    may miss a poorer state's best action although it can afford it; taking
    that action instead keeps the table monotone and still achievable.
    """
    for axis in (0, 1):
        if V.shape[axis] < 2:
            continue
        best = np.maximum.accumulate(V, axis=axis)
        ar = np.arange(V.shape[axis]).reshape((-1, 1) if axis == 0 else (1, -1))
        src = np.maximum.accumulate(np.where(V >= best, ar, 0), axis=axis)
        V, W = best, np.take_along_axis(W, src, axis=axis)
    return V, W


def _grid_actions(E, Bg, g, frac):
    """Geometric water grid per state, cut at the data limit.

    ``frac = 1`` reaches the full buffer ``w = e + 1/g``.
    """
    e = E[:, None, None]
    b = Bg[None, :, None]
    rho = ((1.0 + e * g) ** frac[None, None, :] - 1.0) / g
    rho = np.broadcast_to(rho, (len(E), len(Bg), len(frac))).copy()
    rate = 0.5 * np.log2(1.0 + rho * g)
    if not math.isinf(Bg[0]):
        with np.errstate(over="ignore"):
            cap = (np.exp2(2.0 * b) - 1.0) / g
        over = rate > b
        rho = np.where(over, np.minimum(rho, cap), rho)
        rate = np.minimum(rate, b)
    return rho, rate, rho + 1.0 / g


class DpPolicy(Policy):
    """Acts by one-step lookahead on the interpolated DP value of the next slot."""

    name = "dp"

    def __init__(self, dp: DpModel, fine_actions: int = 257):
        self.dp = dp
        self.frac = np.linspace(0.0, 1.0, fine_actions)

    def decide(self, ctx):
        st = ctx.state
        dp = self.dp
        if ctx.horizon != dp.horizon:
            raise InvalidArgumentError("trace length differs from the DP horizon")
        if ctx.slot >= ctx.horizon:
            return single_slot_decision(st)
        ch = dp.chain
        s = ch.state_of(*ctx.observed)
        g = st.gain
        rho = ((1.0 + st.energy * g) ** self.frac - 1.0) / g
        cap = data_power_cap(st.data, g)
        if cap < st.energy:
            rho = np.append(rho[rho < cap], cap)
        rate = 0.5 * np.log2(1.0 + rho * g)
        if not math.isinf(st.data):
            rate = np.minimum(rate, st.data)
        q = rate.copy()
        for s2 in np.flatnonzero(ch.transition[s] > 0):
            q += ch.transition[s, s2] * dp.interpolate(
                ctx.slot + 1, s2, st.energy - rho + ch.harvest[s2], st.data - rate + ch.arrival[s2])
        k = int(np.argmax(q))
        return log_decision(rho[k], st.energy, st.data, g)


POLICIES = {
    "heuristic": HeuristicPolicy,
    "power-halving": PowerHalvingPolicy,
    "mean-offline": MeanOfflinePolicy,
    "zero": ZeroPolicy,
}
