"""Immediate loss and fill, online-offline efficiency, static-channel fill
bounds, and the distribution of the static offline power under Bernoulli
harvesting.

Static-channel quantities assume gain 1 and an always-full data buffer.  The
offline power there is ``min_u (e + H_1 + ... + H_u) / (u + 1)`` and fills are
computed with natural logs, which leaves every ratio unchanged relative to
the half-log2 rate used elsewhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import kernels
from .core import BufferState, Trace
from .errors import (
    InvalidArgumentError,
    ResourceCapError,
    UndefinedEfficiencyError,
    UnsupportedPolicyError,
)
from .online import Policy, simulate_policy, single_slot_decision
from .processes import (
    RngStream,
    ScenarioModel,
    exogenous_chain,
    sample_continuation,
    sample_paths,
    sample_trace,
)

BATCHES = 20
ENUMERATION_CAP = 200_000


@dataclass(frozen=True)
class Estimate:
    mean: float
    se: float


# ------------------------------------------------------------- static channel


def offline_power_static(e, future_harvests):
    """Offline power ``min_u (e + sum_{l<=u} H_l) / (u + 1)``.

    ``future_harvests`` may be a vector (one continuation) or an
    ``(R, K)`` matrix with one continuation per row; ``e`` broadcasts.
    """
    h = np.asarray(future_harvests, dtype=float)
    if np.any(h < 0) or np.any(np.asarray(e) < 0):
        raise InvalidArgumentError("energy and harvests must be non-negative")
    if h.ndim == 1:
        return float(kernels.static_offline_power(np.atleast_1d(float(e)), h[None, :])[0])
    e = np.broadcast_to(np.asarray(e, dtype=float), (h.shape[0],))
    return kernels.static_offline_power(np.ascontiguousarray(e), h)


def static_offline_schedule(e, harvests: np.ndarray) -> np.ndarray:
    """Offline powers of slots ``0..K`` per row of the ``(R, K)`` harvest matrix."""
    h = np.atleast_2d(np.asarray(harvests, dtype=float))
    r, k = h.shape
    e = np.broadcast_to(np.asarray(e, dtype=float), (r,)).copy()
    out = np.empty((r, k + 1))
    for t in range(k + 1):
        rho = kernels.static_offline_power(e, h[:, t:]) if t < k else e.copy()
        out[:, t] = rho
        if t < k:
            e = np.maximum(e - rho, 0.0) + h[:, t]
    return out


def static_offline_total(e, harvests: np.ndarray) -> np.ndarray:
    """Offline total ``sum ln(1 + rho)`` per row."""
    return np.log1p(static_offline_schedule(e, harvests)).sum(axis=1)


# --------------------------------------------------------- outage distribution


def phi_root(m: int, p: float) -> float:
    """Smallest root in (0, 1] of ``p x^m - x + 1 - p``.

    The polynomial is convex on [0, 1] with value ``1 - p`` at 0 and 0 at 1,
    so an interior root exists exactly when its slope at 1 is positive,
    i.e. ``p m > 1``; it then lies left of the minimiser.
    """
    if int(m) != m or m < 1:
        raise InvalidArgumentError("m must be a positive integer")
    if not 0.0 < p < 1.0:
        raise InvalidArgumentError("p must lie in (0, 1)")
    m = int(m)
    if p * m <= 1.0:
        return 1.0
    lo, hi = 0.0, (1.0 / (p * m)) ** (1.0 / (m - 1))
    g = lambda x: p * x ** m - x + 1.0 - p  # noqa: E731
    while True:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if g(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return lo if abs(g(lo)) <= abs(g(hi)) else hi


def _step_index(x, m, h):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0) or h <= 0:
        raise InvalidArgumentError("need x > 0 and h > 0")
    return np.floor(m * x / h).astype(np.int64)


def asymptotic_cdf(x, m: int, p: float, h: float):
    """Long-horizon ``Pr(offline power < h/m | e = x) = phi(m)^floor(m x / h)``."""
    j = _step_index(x, m, h)
    out = phi_root(m, p) ** j.astype(float)
    return float(out) if out.ndim == 0 else out


def cdf_coefficients(remaining: int, m: int, p: float, j_max: int) -> np.ndarray:
    """``Pr(offline power < h/m)`` for energy steps ``j = 0..j_max``.

    With ``j = floor(m e / h)`` and ``K`` slots left the probabilities obey
    ``P_0(j) = [j = 0]``, ``P_K(0) = 1`` and
    ``P_K(j) = (1 - p) P_{K-1}(j - 1) + p P_{K-1}(j - 1 + m)``.
    """
    if remaining < 0 or j_max < 0:
        raise InvalidArgumentError("remaining and j_max must be non-negative")
    if int(m) != m or m < 1 or not 0.0 <= p <= 1.0:
        raise InvalidArgumentError("need integer m >= 1 and p in [0, 1]")
    m = int(m)
    size = j_max + remaining * (m - 1) + 1
    P, Q = np.zeros(size + m), np.zeros(size + m)
    P[0] = 1.0
    for k in range(1, remaining + 1):
        need = j_max + (remaining - k) * (m - 1) + 1
        live = min(need, k + 1)  # j steps down by at most one per slot
        Q[0] = 1.0
        Q[1:live] = (1.0 - p) * P[:live - 1] + p * P[m:m + live - 1]
        P, Q = Q, P
    return P[:j_max + 1].copy()


def finite_horizon_cdf(remaining: int, x, m: int, p: float, h: float):
    """``Pr(offline power < h/m | e = x)`` with ``remaining`` future slots."""
    j = _step_index(x, m, h)
    a = cdf_coefficients(remaining, m, p, int(np.max(j)))
    out = a[j]
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CdfModel:
    p: float
    h: float
    m: int
    remaining: int
    phi: float
    coefficients: np.ndarray


def cdf_model(p: float, h: float, m: int, remaining: int, j_max: int) -> CdfModel:
    return CdfModel(p, h, m, remaining, phi_root(m, p) if 0 < p < 1 else float("nan"),
                    cdf_coefficients(remaining, m, p, j_max))


def mc_cdf(e: float, remaining: int, thresholds: Sequence[float], replicates: int,
           p: float, h: float, rng, chunk: int = 20_000):
    """Empirical ``Pr(offline power < t)`` with binomial standard errors."""
    if replicates < 1:
        raise InvalidArgumentError("replicates must be >= 1")
    thr = np.asarray(thresholds, dtype=float)
    hits = np.zeros(len(thr))
    stream = rng if isinstance(rng, RngStream) else RngStream(int(rng))
    done = 0
    c = 0
    while done < replicates:
        r = min(chunk, replicates - done)
        gen = stream.child(c).generator()
        H = np.where(gen.random((r, remaining)) < p, float(h), 0.0)
        x = offline_power_static(np.full(r, float(e)), H)
        hits += (x[:, None] < thr[None, :]).sum(axis=0)
        done += r
        c += 1
    F = hits / replicates
    return F, np.sqrt(F * (1.0 - F) / replicates)


# ------------------------------------------------------- immediate loss / fill


@dataclass(frozen=True)
class FillReport:
    immediate_gain: float
    immediate_loss: float  # raw Monte Carlo mean, may dip below 0 by noise
    loss_se: float
    fill: float
    fill_se: float
    efficiency: Optional[float] = None
    efficiency_se: Optional[float] = None


def _fill(gain, loss):
    loss = max(loss, 0.0)
    if gain + loss <= 1e-15:
        return 1.0
    return gain / (gain + loss)


def _fill_se(gain, loss, loss_se):
    loss = max(loss, 0.0)
    if gain + loss <= 1e-15:
        return 0.0
    return gain * loss_se / (gain + loss) ** 2


def _log_total(trace: Trace, e: float, b: float, start: int = 0) -> float:
    if start >= trace.n_slots:
        return 0.0
    out = kernels.solve_log_trace(e, b, trace.harvests[start:], trace.arrivals[start:],
                                  trace.gains[start:])
    return math.fsum(out[2])


def _rate(rho, gain):
    return 0.5 * math.log2(1.0 + rho * gain)


def _loss_on(cont: Trace, state: BufferState, rho: float) -> float:
    """Offline total from the state minus (immediate rate + offline total after ``rho``)."""
    r = min(_rate(rho, state.gain), state.data)
    full = _log_total(cont, state.energy, state.data)
    if cont.n_slots == 1:
        return full - r
    e2 = max(state.energy - rho, 0.0) + cont.harvests[1]
    b2 = max(state.data - r, 0.0) + cont.arrivals[1]
    return full - r - _log_total(cont, e2, b2, 1)


def immediate_loss_estimate(rho: float, state: BufferState, model: ScenarioModel,
                            observed: tuple, replicates: int, rng) -> Estimate:
    """Mean and SE of the loss of spending ``rho`` now, over sampled continuations.

    ``observed`` is the current ``(H_n, B_n, gain_n)``; the continuation covers
    slots ``n+1..N`` with ``N = model.horizon``.
    """
    if rho < 0 or rho > state.energy + 1e-12:
        raise InvalidArgumentError("rho must lie in [0, energy]")
    if replicates < 1:
        raise InvalidArgumentError("replicates must be >= 1")
    left = model.horizon - state.slot
    if left < 0:
        raise InvalidArgumentError("state slot beyond the model horizon")
    stream = rng if isinstance(rng, RngStream) else RngStream(int(rng))
    losses = np.empty(replicates)
    for k in range(replicates):
        cont = sample_continuation(model, observed, left, stream.child(k))
        losses[k] = _loss_on(cont, state, rho)
    se = float(losses.std(ddof=1) / math.sqrt(replicates)) if replicates > 1 else 0.0
    return Estimate(float(losses.mean()), se)


def immediate_fill(rho: float, state: BufferState, model: ScenarioModel, observed: tuple,
                   replicates: int, rng) -> FillReport:
    """Gain over gain plus loss for spending ``rho`` at the current slot."""
    loss = immediate_loss_estimate(rho, state, model, observed, replicates, rng)
    gain = min(_rate(rho, state.gain), state.data)
    return FillReport(gain, loss.mean, loss.se, _fill(gain, loss.mean),
                      _fill_se(gain, loss.mean, loss.se))


# ----------------------------------------------------- static-channel bounds


class StaticSample:
    """Shared harvest continuations for the static-channel bounds.

    ``harvests[r]`` holds slots ``n+1..N`` of replicate ``r``; ``offline``
    is the offline power of slot ``n`` on each.
    """

    def __init__(self, state: BufferState, model: ScenarioModel, replicates: int, rng,
                 observed_harvest: Optional[float] = None):
        _, gains, _ = model.channel.chain()
        if not np.all(gains == 1.0):
            raise UnsupportedPolicyError("static-channel bounds need a constant unit gain")
        if not math.isinf(state.data):
            raise UnsupportedPolicyError("static-channel bounds need an always-full data buffer")
        if replicates < 1:
            raise InvalidArgumentError("replicates must be >= 1")
        self.energy = float(state.energy)
        self.remaining = model.horizon - state.slot
        if self.remaining < 0:
            raise InvalidArgumentError("state slot beyond the model horizon")
        gen = rng.generator() if isinstance(rng, RngStream) else rng
        self.harvests = sample_paths(model.harvest, observed_harvest, replicates,
                                     self.remaining, gen)
        self.offline = offline_power_static(self.energy, self.harvests) \
            if self.remaining else np.full(replicates, self.energy)
        self._full = None

    @property
    def replicates(self) -> int:
        return self.harvests.shape[0]

    def after(self, rho: float) -> np.ndarray:
        """Offline power of slot ``n+1`` once ``rho`` is spent (0 if none remain)."""
        if self.remaining == 0:
            return np.zeros(self.replicates)
        e2 = self.energy - rho + self.harvests[:, 0]
        return offline_power_static(e2, self.harvests[:, 1:])

    def losses(self, rho: float) -> np.ndarray:
        """Per-replicate loss (natural log units) of spending ``rho``."""
        if self._full is None:
            self._full = static_offline_total(self.energy, self.harvests)
        if self.remaining == 0:
            return self._full - math.log1p(rho)
        e2 = self.energy - rho + self.harvests[:, 0]
        return self._full - math.log1p(rho) - static_offline_total(e2, self.harvests[:, 1:])

    def fill(self, rho: float):
        """``(fill, se)`` of spending ``rho``."""
        L = self.losses(rho)
        gain = math.log1p(rho)
        mean = float(L.mean())
        se = float(L.std(ddof=1) / math.sqrt(len(L))) if len(L) > 1 else 0.0
        return _fill(gain, mean), _fill_se(gain, mean, se)


def _batch_se(stat: Callable[[np.ndarray], float], n: int, batches: int = BATCHES) -> float:
    if n < 2 * batches:
        return 0.0
    idx = np.array_split(np.arange(n), batches)
    vals = np.array([stat(i) for i in idx])
    return float(vals.std(ddof=1) / math.sqrt(batches))


def _spend_bound(rho, X, after):
    num = math.log1p(rho)
    den = float(np.mean(np.log1p(X)) + np.mean(np.maximum(rho - X, 0.0) / (1.0 + after)))
    if num == 0.0 and den == 0.0:
        return 1.0
    return num / den


def fill_lower_bound(rho: float, sample: StaticSample) -> Estimate:
    """Lower bound on the fill of spending ``rho``:
    ``ln(1+rho) / (E ln(1+X) + E[(rho - X)^+ / (1 + X')])`` with ``X`` the
    offline power now and ``X'`` the offline power next slot after ``rho``.
    """
    X, after = sample.offline, sample.after(rho)
    val = _spend_bound(rho, X, after)
    se = _batch_se(lambda i: _spend_bound(rho, X[i], after[i]), len(X))
    return Estimate(val, se)


def _mean_spend_bounds(X, after):
    mu = float(np.mean(X))
    denom = math.log1p(mu)
    gap = np.maximum(mu - X, 0.0)
    if denom == 0.0:
        return 1.0, 1.0, 1.0
    lb = 1.0 / (1.0 + float(np.mean(gap / (1.0 + after))) / denom)
    simple = 1.0 / (1.0 + float(np.mean(gap)) / denom)
    var = 1.0 / (1.0 + float(np.std(X)) / denom)
    return lb, simple, var


@dataclass(frozen=True)
class MeanSpendBounds:
    """Fill bounds for spending the mean offline power ``E[X]``.

    ``lb >= simplified >= variance`` holds exactly on any sample; SEs are
    batch-means estimates.
    """

    mean_power: float
    lb: float
    simplified: float
    variance: float
    lb_se: float
    simplified_se: float
    variance_se: float


def max_fill_lower_bounds(sample: StaticSample) -> MeanSpendBounds:
    """Bounds on the best achievable fill, all from one sample set."""
    X = sample.offline
    mu = float(np.mean(X))
    vals = _mean_spend_bounds(X, sample.after(mu))

    def on_batch(i):
        return _mean_spend_bounds(X[i], sample.after(float(np.mean(X[i])))[i])

    if len(X) >= 2 * BATCHES:
        per = np.array([on_batch(i) for i in np.array_split(np.arange(len(X)), BATCHES)])
        ses = per.std(axis=0, ddof=1) / math.sqrt(BATCHES)
    else:
        ses = np.zeros(3)
    return MeanSpendBounds(mu, *vals, *(float(v) for v in ses))


# ------------------------------------------------------------- efficiency


@dataclass(frozen=True)
class EfficiencyEstimate:
    eta: float
    se: float
    policy_mean: float
    policy_se: float
    offline_mean: float
    offline_se: float
    replicates: int


def ratio_of_means(num: np.ndarray, den: np.ndarray):
    """``mean(num) / mean(den)`` with its delta-method standard error."""
    num, den = np.asarray(num, dtype=float), np.asarray(den, dtype=float)
    md = float(den.mean())
    if md <= 0.0:
        raise UndefinedEfficiencyError("offline throughput is zero on every replicate")
    eta = float(num.mean()) / md
    n = len(num)
    se = float(np.std(num - eta * den, ddof=1) / (md * math.sqrt(n))) if n > 1 else 0.0
    return eta, se


PolicyLike = Union[Policy, Callable[[Trace, float, float], Policy]]


def _resolve(policy: PolicyLike, trace, e1, b1) -> Policy:
    return policy if isinstance(policy, Policy) else policy(trace, e1, b1)


def paired_totals(policy: PolicyLike, model: ScenarioModel, replicates: int, rng):
    """Policy and offline totals on the same sampled traces."""
    stream = rng if isinstance(rng, RngStream) else RngStream(int(rng))
    pol, off = np.empty(replicates), np.empty(replicates)
    for k in range(replicates):
        tr = sample_trace(model, stream.child(k, 0))
        e1, b1 = model.initial_buffers(tr)
        sched, _ = simulate_policy(_resolve(policy, tr, e1, b1), tr, e1, b1, model,
                                   stream.child(k, 1))
        pol[k] = sched.total_throughput
        off[k] = _log_total(tr, e1, b1)
    return pol, off


def efficiency_estimate(policy: PolicyLike, model: ScenarioModel, replicates: int,
                        rng) -> EfficiencyEstimate:
    """Ratio of mean policy throughput to mean offline throughput."""
    if replicates < 1:
        raise InvalidArgumentError("replicates must be >= 1")
    pol, off = paired_totals(policy, model, replicates, rng)
    eta, se = ratio_of_means(pol, off)
    sq = math.sqrt(replicates)
    sd = (lambda a: float(a.std(ddof=1)) / sq) if replicates > 1 else (lambda a: 0.0)
    return EfficiencyEstimate(eta, se, float(pol.mean()), sd(pol), float(off.mean()), sd(off),
                              replicates)


# ------------------------------------------------- exact check on small models


@dataclass(frozen=True)
class EfficiencyBoundCheck:
    """Exact efficiency versus the minimum fill over reachable states."""

    eta: float
    min_fill: float
    holds: bool
    n_paths: int
    n_states: int
    eta_se: float = 0.0


def verify_efficiency_bound(model: ScenarioModel, policy: Policy,
                            cap: int = ENUMERATION_CAP, tol: float = 1e-9
                            ) -> EfficiencyBoundCheck:
    """Enumerate every exogenous path to check ``eta >= min fill``.

    Both sides are exact expectations, so the standard error is zero.  The
    policy must be deterministic and spend what the buffers allow in the
    last slot.
    """
    ch = exogenous_chain(model)
    N, S = model.horizon, ch.n_states
    n_paths = S ** N
    if n_paths > cap:
        raise ResourceCapError(f"{n_paths} exogenous paths exceed the cap {cap}", n_paths)
    paths, probs = [], []
    for path in np.ndindex(*([S] * N)):
        pr = ch.initial[path[0]]
        for a, b in zip(path, path[1:]):
            pr *= ch.transition[a, b]
        if pr > 0:
            paths.append(path)
            probs.append(pr)
    probs = np.array(probs)

    def trace_of(path):
        idx = np.array(path)
        return Trace(ch.harvest[idx], ch.arrival[idx], ch.gain[idx])

    nodes = {}  # prefix -> (state, rho)
    pol_tot, off_tot = np.empty(len(paths)), np.empty(len(paths))
    traces = []
    for k, path in enumerate(paths):
        tr = trace_of(path)
        traces.append(tr)
        e1, b1 = model.initial_buffers(tr)
        sched, diag = simulate_policy(policy, tr, e1, b1, model, RngStream(0))
        pol_tot[k] = sched.total_throughput
        off_tot[k] = _log_total(tr, e1, b1)
        for m in range(N):
            st = BufferState(float(diag.energy[m]), float(diag.data[m]), float(tr.gains[m]), m + 1)
            key = path[:m + 1]
            if key not in nodes:
                nodes[key] = (st, float(sched.power[m]))
        last = BufferState(float(diag.energy[-1]), float(diag.data[-1]), float(tr.gains[-1]), N)
        if abs(sched.power[-1] - single_slot_decision(last).power) > 1e-9:
            raise UnsupportedPolicyError("policy does not spend its buffers in the last slot")
    mean_off = float(off_tot @ probs)
    if mean_off <= 0.0:
        raise UndefinedEfficiencyError("offline throughput is zero on every path")
    eta = float(pol_tot @ probs) / mean_off

    min_fill = 1.0
    for key, (st, rho) in nodes.items():
        m = len(key)
        sel = [k for k, p in enumerate(paths) if p[:m] == key]
        w = probs[sel] / probs[sel].sum()
        losses = np.array([_loss_on(traces[k].tail(m), st, rho) for k in sel])
        loss = float(w @ losses)
        gain = min(_rate(rho, st.gain), st.data)
        min_fill = min(min_fill, _fill(gain, loss))
    return EfficiencyBoundCheck(eta, min_fill, eta >= min_fill - tol, len(paths), len(nodes))
