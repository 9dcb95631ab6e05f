"""Pure-Python/numpy implementations of the hot kernels.

Signatures mirror ``_kernels.pyx`` exactly; :mod:`ehwater.kernels` picks one
at import time.
"""

import math

import numpy as np

BACKEND = "python"
NOISE = 16.0 * 2.220446049250313e-16
EPS = 2.220446049250313e-16


def _noise(x):
    return NOISE * max(1.0, abs(x))


def fixed_point(D, seed, tol=1e-10, max_iter=200, accelerate=True):
    """Solve ``D(w) = 0`` by the iteration ``w <- w + D(w)`` from ``seed``.

    ``D(w) = T(w) - w`` must be non-negative below the fixed point and
    negative above it.  Accepted iterates stay on the seed's side of the fixed
    point, so from an upper seed they are non-increasing and converge to the
    largest fixed point.  Until a point on the far side is seen, each step is
    the plain map or, with ``accelerate``, a bolder secant extrapolation.
    Once a far-side point brackets the fixed point, steps try that secant and
    then false position inside the bracket, falling back to bisection
    whenever the same end of the bracket moved twice in a row.

    Once ``|D(w)| <= tol`` a probe one ``tol`` step past ``w`` decides: if it
    is no longer on the seed's side the fixed point lies within ``tol`` of
    ``w`` and the solve stops, otherwise the probe becomes the next iterate
    and the following step extrapolates along the secant through it.
    A shallow ``D`` therefore cannot stop ``w`` far from the fixed point.

    Values within a noise floor of a few ulps count as zero.  A candidate in
    that band is returned as the root when a probe ``tol`` back towards the
    seed is clearly on the seed's side, so a flat run of roots still yields
    its edge nearest the seed.

    Returns ``(w, iterates, converged, residual)``.
    """
    w = float(seed)
    d = D(w)
    iterates = [w]
    s = 1.0 if d > 0 else -1.0
    ow = od = None
    pw = pd = None
    last = 0
    streak = 0  # consecutive updates of the same bracket end
    probed = False
    for _ in range(max_iter):
        if abs(d) <= tol and not probed:
            q = w + s * max(tol, 4.0 * EPS * abs(w))
            if ow is not None and s * (ow - q) <= 0:
                return w, iterates, True, abs(d)
            dq = D(q)
            if s * dq <= _noise(q):
                return w, iterates, True, abs(d)
            pw, pd, w, d = w, d, q, dq
            iterates.append(w)
            probed = True  # next step uses the local secant through the probe
            continue
        probed = False
        if ow is None:
            c = w + d
            if accelerate and pw is not None and d != pd:
                z = w - d * (w - pw) / (d - pd)
                if s * (z - c) > 0:
                    c = z
            if c <= 0.0:
                c = 0.5 * w
        else:
            c = 0.5 * (w + ow)
            if accelerate and streak < 2:
                for qw, qd in ((pw, pd), (ow, od)):
                    if qw is None or qd == d:
                        continue
                    z = w - d * (w - qw) / (d - qd)
                    if s * (z - w) > 0 and s * (ow - z) > 0:
                        c = z
                        break
            if c == w or c == ow:
                break
        dc = D(c)
        if abs(dc) <= _noise(c):
            # a root; keep it only if it is the edge nearest the seed
            q = c - s * tol * max(1.0, abs(c))
            if s * (q - w) > 0 and s * D(q) > _noise(q):
                iterates.append(c)
                return c, iterates, True, abs(dc)
        if s * dc > min(0.25 * tol, _noise(c)):
            pw, pd, w, d = w, d, c, dc
            iterates.append(w)
            streak = streak + 1 if last == 1 else 1
            last = 1
        else:
            ow, od = c, dc
            streak = streak + 1 if last == -1 else 1
            last = -1
    return w, iterates, abs(d) <= tol, abs(d)


def log_slot_map(e, b, future_h, future_b, inv_gains):
    """``D(w)`` for the half-log2 fast path at one slot.

    ``future_h``/``future_b`` hold harvests/arrivals of slots ``n+1..N``;
    ``inv_gains`` holds ``1/gain`` for slots ``n..N``.
    """
    counts = np.arange(1.0, len(inv_gains) + 1.0)
    cum_h = np.concatenate(([0.0], np.cumsum(future_h)))
    e_num = e + cum_h
    data_limited = not math.isinf(b)
    if data_limited:
        b_num = 2.0 * (b + np.concatenate(([0.0], np.cumsum(future_b))))

    def D(w):
        te = float(np.min((e_num + np.cumsum(np.minimum(inv_gains, w))) / counts))
        if data_limited:
            lw = float(np.min((b_num + np.cumsum(np.log2(np.minimum(inv_gains, w)))) / counts))
            tb = math.inf if lw > 1000.0 else 2.0 ** lw
            te = min(te, tb)
        return te - w

    return D


def _advance(e, b, w, inv_gain, gain):
    rho = min(max(w - inv_gain, 0.0), e)
    r = 0.5 * math.log2(1.0 + rho * gain)
    if r > b:
        rho = min(rho, (2.0 ** (2.0 * b) - 1.0) / gain)
        r = min(0.5 * math.log2(1.0 + rho * gain), b)
    return rho, r


def solve_log_trace(e1, b1, harvests, arrivals, gains, tol=1e-10, max_iter=200,
                    accelerate=True, n_solve=-1):
    """Slot-by-slot half-log2 offline solve of the first ``n_solve`` slots."""
    harvests = np.asarray(harvests, dtype=float)
    arrivals = np.asarray(arrivals, dtype=float)
    gains = np.asarray(gains, dtype=float)
    n = len(gains)
    m = n if n_solve < 0 else min(n_solve, n)
    inv = 1.0 / gains
    water = np.zeros(m)
    power = np.zeros(m)
    rate = np.zeros(m)
    iters = np.zeros(m, dtype=np.int64)
    resid = np.zeros(m)
    conv = np.ones(m, dtype=bool)
    e, b = float(e1), float(b1)
    for i in range(m):
        D = log_slot_map(e, b, harvests[i + 1:], arrivals[i + 1:], inv[i:])
        seed = e + float(np.sum(harvests[i + 1:])) + float(np.max(inv[i:]))
        w, its, ok, res = fixed_point(D, seed, tol, max_iter, accelerate)
        rho, r = _advance(e, b, w, inv[i], gains[i])
        water[i], power[i], rate[i] = w, rho, r
        iters[i], resid[i], conv[i] = len(its), res, ok
        e = max(e - rho, 0.0) + (harvests[i + 1] if i + 1 < n else 0.0)
        b = max(b - r, 0.0) + (arrivals[i + 1] if i + 1 < n else 0.0)
    return water, power, rate, iters, resid, conv


_RATES = {
    # name: (f, level(w * gain), f^{-1}, water at power budget on gain g)
    "log": (lambda x: 0.5 * np.log2(x), lambda wg: wg, lambda r: 2.0 ** (2.0 * r),
            lambda p, g: (1.0 + p * g) / g),
    "ln": (np.log, lambda wg: wg, math.exp, lambda p, g: (1.0 + p * g) / g),
    "sqrt": (lambda x: 2.0 * (np.sqrt(x) - 1.0), lambda wg: wg * wg,
             lambda r: (0.5 * r + 1.0) ** 2, lambda p, g: math.sqrt(1.0 + p * g) / g),
}


def general_slot_map(e, b, future_h, future_b, gains, rate):
    """``D(w)`` of the general bounds for a built-in rate function."""
    f, level, _, _ = _RATES[rate]
    counts = np.arange(1.0, len(gains) + 1.0)
    e_num = e + np.concatenate(([0.0], np.cumsum(future_h)))
    data_limited = not math.isinf(b)
    b_num = b + np.concatenate(([0.0], np.cumsum(future_b)))
    inv = 1.0 / gains

    def D(w):
        wg = w * gains
        x = np.where(wg > 1.0, level(wg), 1.0)
        te = float(((e_num + np.cumsum(w - (x - 1.0) * inv)) / counts).min())
        if data_limited:
            tb = float(((b_num + np.cumsum(w - f(x))) / counts).min())
            te = min(te, tb)
        return te - w

    return D


def solve_general_trace(e1, b1, harvests, arrivals, gains, rate, tol=1e-10, max_iter=200,
                        accelerate=True, n_solve=-1):
    """Slot-by-slot solve with the general bounds for a built-in rate function."""
    f, level, finv, water_at = _RATES[rate]
    harvests = np.asarray(harvests, dtype=float)
    arrivals = np.asarray(arrivals, dtype=float)
    gains = np.asarray(gains, dtype=float)
    n = len(gains)
    m = n if n_solve < 0 else min(n_solve, n)
    water, power, rates = np.zeros(m), np.zeros(m), np.zeros(m)
    iters = np.zeros(m, dtype=np.int64)
    resid = np.zeros(m)
    conv = np.ones(m, dtype=bool)
    e, b = float(e1), float(b1)
    for i in range(m):
        D = general_slot_map(e, b, harvests[i + 1:], arrivals[i + 1:], gains[i:], rate)
        gmax = float(np.max(gains[i:]))
        seed = water_at(e + float(np.sum(harvests[i + 1:])), gmax) + float(np.max(1.0 / gains[i:]))
        w, its, ok, res = fixed_point(D, seed, tol, max_iter, accelerate)
        g = gains[i]
        rho = (level(w * g) - 1.0) / g if w * g > 1.0 else 0.0
        rho = min(rho, e)
        r = float(f(1.0 + rho * g))
        if r > b:
            rho = min(rho, max(finv(b) - 1.0, 0.0) / g)
            r = min(float(f(1.0 + rho * g)), b)
        water[i], power[i], rates[i] = w, rho, r
        iters[i], resid[i], conv[i] = len(its), res, ok
        e = max(e - rho, 0.0) + (harvests[i + 1] if i + 1 < n else 0.0)
        b = max(b - r, 0.0) + (arrivals[i + 1] if i + 1 < n else 0.0)
    return water, power, rates, iters, resid, conv


def heuristic_map(a, bt, inv_gain_hist):
    """``D(w)`` of the running-average estimator with intercepts ``a`` and ``bt``.

    ``a`` is the energy intercept, ``bt`` the log2-domain data intercept
    (``inf`` for an unconstrained data buffer).
    """
    inv_gain_hist = np.asarray(inv_gain_hist, dtype=float)
    data_limited = not math.isinf(bt)

    def D(w):
        clipped = np.minimum(inv_gain_hist, w)
        we = a + float(np.mean(clipped))
        if data_limited:
            with np.errstate(divide="ignore"):
                lw = bt + float(np.mean(np.log2(clipped)))
            we = min(we, math.inf if lw > 1000.0 else 2.0 ** lw)
        return we - w

    return D


def heuristic_water(e, b, a, bt, inv_gain_hist, tol=1e-10, max_iter=200):
    """Iterate the estimator from ``min(e, 2^(2b))``; returns ``(w, iters, ok)``."""
    if e <= 0.0:
        return 0.0, 0, True
    seed = e if 2.0 * b >= math.log2(e) else 2.0 ** (2.0 * b)
    D = heuristic_map(a, bt, inv_gain_hist)
    w, its, ok, _ = fixed_point(D, seed, tol, max_iter, True)
    return w, len(its), ok


def static_offline_power(e, harvests):
    """Row-wise ``min_u (e + sum_{1..u} H) / (u + 1)`` for ``H`` of shape (R, K)."""
    e = np.asarray(e, dtype=float).reshape(-1)
    h = np.asarray(harvests, dtype=float)
    if h.ndim == 1:
        h = h.reshape(1, -1)
    r, k = h.shape
    if k == 0:
        return e.copy() if len(e) == r else np.broadcast_to(e, (r,)).copy()
    num = np.empty((r, k + 1))
    num[:, 0] = 0.0
    np.cumsum(h, axis=1, out=num[:, 1:])
    num += e[:, None]
    num /= np.arange(1.0, k + 2.0)
    return num.min(axis=1)
