# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; semantics match ``_pykernels`` line for line."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, log2, exp, exp2, sqrt, fabs, fmin, fmax, INFINITY, isinf

cnp.import_array()

BACKEND = "cython"
cdef double NOISE = 16.0 * 2.220446049250313e-16
cdef double EPS = 2.220446049250313e-16

cdef enum:
    LOG_KIND = 0
    HEUR_KIND = 1
    GEN_KIND = 2

cdef enum:
    RATE_LOG = 0
    RATE_LN = 1
    RATE_SQRT = 2

_RATE_CODES = {"log": RATE_LOG, "ln": RATE_LN, "sqrt": RATE_SQRT}


cdef struct MapCtx:
    int kind
    int k                 # number of slots in the window (offline) or history length
    double e
    double b
    double a              # heuristic energy intercept
    double bt             # heuristic log-data intercept
    bint data_limited
    int rate              # GEN_KIND only
    double *e_num         # offline: e + cumulative future harvests, length k
    double *b_num         # log: 2 (b + cum. arrivals); general: b + cum. arrivals
    double *inv           # 1/gain, length k


cdef inline double rate_eval(int rate, double x) nogil:
    if rate == RATE_LOG:
        return 0.5 * log2(x)
    if rate == RATE_LN:
        return log(x)
    return 2.0 * (sqrt(x) - 1.0)


cdef inline double rate_level(int rate, double wg) nogil:
    # 1 + rho * gain at water level w with w * gain = wg > 1
    if rate == RATE_SQRT:
        return wg * wg
    return wg


cdef inline double rate_inverse(int rate, double r) nogil:
    if rate == RATE_LOG:
        return exp2(2.0 * r)
    if rate == RATE_LN:
        return exp(r)
    return (0.5 * r + 1.0) * (0.5 * r + 1.0)


cdef double eval_map(MapCtx *c, double w) nogil:
    cdef int l
    cdef double se = 0.0, sb = 0.0, te = INFINITY, tb = INFINITY, v, m, wg, x
    if c.kind == GEN_KIND:
        for l in range(c.k):
            wg = w / c.inv[l]
            x = rate_level(c.rate, wg) if wg > 1.0 else 1.0
            se += w - (x - 1.0) * c.inv[l]
            v = (c.e_num[l] + se) / (l + 1.0)
            if v < te:
                te = v
            if c.data_limited:
                sb += w - rate_eval(c.rate, x)
                v = (c.b_num[l] + sb) / (l + 1.0)
                if v < tb:
                    tb = v
    elif c.kind == LOG_KIND:
        for l in range(c.k):
            m = c.inv[l] if c.inv[l] < w else w
            se += m
            v = (c.e_num[l] + se) / (l + 1.0)
            if v < te:
                te = v
            if c.data_limited:
                sb += log2(m)
                v = (c.b_num[l] + sb) / (l + 1.0)
                if v < tb:
                    tb = v
        if c.data_limited:
            tb = INFINITY if tb > 1000.0 else exp2(tb)
    else:
        for l in range(c.k):
            m = c.inv[l] if c.inv[l] < w else w
            se += m
            if c.data_limited:
                sb += log2(m)
        te = c.a + se / c.k
        if c.data_limited:
            v = c.bt + sb / c.k
            tb = INFINITY if v > 1000.0 else exp2(v)
    if tb < te:
        te = tb
    return te - w


cdef inline double noise(double x) nogil:
    return NOISE * fmax(1.0, fabs(x))


cdef int solve_fp(MapCtx *c, double seed, double tol, int max_iter, bint accelerate,
                  double *w_out, double *res_out, bint *conv_out) nogil:
    """Same algorithm as ``_pykernels.fixed_point``; returns iterate count."""
    cdef double w = seed, d, s, z, q, dq, cand, dc, ow = 0.0, od = 0.0, pw = 0.0, pd = 0.0
    cdef bint have_other = False, have_prev = False, took = False, probed = False
    cdef int n_it = 1, it, streak = 0, last = 0
    d = eval_map(c, w)
    s = 1.0 if d > 0 else -1.0
    for it in range(max_iter):
        if fabs(d) <= tol and not probed:
            q = w + s * fmax(tol, 4.0 * EPS * fabs(w))
            if have_other and s * (ow - q) <= 0:
                break
            dq = eval_map(c, q)
            if s * dq <= noise(q):
                break
            pw = w
            pd = d
            w = q
            d = dq
            have_prev = True
            n_it += 1
            probed = True
            continue
        probed = False
        if not have_other:
            cand = w + d
            if accelerate and have_prev and d != pd:
                z = w - d * (w - pw) / (d - pd)
                if s * (z - cand) > 0:
                    cand = z
            if cand <= 0.0:
                cand = 0.5 * w
        else:
            cand = 0.5 * (w + ow)
            took = False
            if accelerate and streak < 2:
                if have_prev and d != pd:
                    z = w - d * (w - pw) / (d - pd)
                    if s * (z - w) > 0 and s * (ow - z) > 0:
                        cand = z
                        took = True
                if not took and d != od:
                    z = w - d * (w - ow) / (d - od)
                    if s * (z - w) > 0 and s * (ow - z) > 0:
                        cand = z
            if cand == w or cand == ow:
                break
        dc = eval_map(c, cand)
        if fabs(dc) <= noise(cand):
            q = cand - s * tol * fmax(1.0, fabs(cand))
            if s * (q - w) > 0 and s * eval_map(c, q) > noise(q):
                w_out[0] = cand
                res_out[0] = fabs(dc)
                conv_out[0] = True
                return n_it + 1
        if s * dc > fmin(0.25 * tol, noise(cand)):
            pw = w
            pd = d
            w = cand
            d = dc
            have_prev = True
            n_it += 1
            streak = streak + 1 if last == 1 else 1
            last = 1
        else:
            ow = cand
            od = dc
            have_other = True
            streak = streak + 1 if last == -1 else 1
            last = -1
    w_out[0] = w
    res_out[0] = fabs(d)
    conv_out[0] = fabs(d) <= tol
    return n_it


def solve_log_trace(double e1, double b1, harvests, arrivals, gains, double tol=1e-10,
                    int max_iter=200, bint accelerate=True, int n_solve=-1):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] H = np.ascontiguousarray(harvests, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] B = np.ascontiguousarray(arrivals, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] g = np.ascontiguousarray(gains, dtype=np.float64)
    cdef int n = g.shape[0]
    cdef int m = n if n_solve < 0 or n_solve > n else n_solve
    cdef cnp.ndarray[cnp.float64_t, ndim=1] inv = 1.0 / g
    cdef cnp.ndarray[cnp.float64_t, ndim=1] e_num = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] b_num = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] water = np.zeros(m)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] power = np.zeros(m)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] rate = np.zeros(m)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] iters = np.zeros(m, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] resid = np.zeros(m)
    cdef cnp.ndarray[cnp.npy_bool, ndim=1, cast=True] conv = np.ones(m, dtype=bool)
    cdef MapCtx c
    cdef double e = e1, b = b1, seed, maxinv, acc_h, acc_b, w, res, rho, r
    cdef bint ok
    cdef int i, l, k
    c.kind = LOG_KIND
    for i in range(m):
        k = n - i
        c.k = k
        c.e = e
        c.b = b
        c.data_limited = not isinf(b)
        acc_h = 0.0
        acc_b = 0.0
        maxinv = 0.0
        for l in range(k):
            if l > 0:
                acc_h += H[i + l]
                acc_b += B[i + l]
            e_num[l] = e + acc_h
            b_num[l] = 2.0 * (b + acc_b)
            if inv[i + l] > maxinv:
                maxinv = inv[i + l]
        c.e_num = &e_num[0]
        c.b_num = &b_num[0]
        c.inv = &inv[i]
        seed = e + acc_h + maxinv
        iters[i] = solve_fp(&c, seed, tol, max_iter, accelerate, &w, &res, &ok)
        rho = w - inv[i]
        if rho < 0.0:
            rho = 0.0
        if rho > e:
            rho = e
        r = 0.5 * log2(1.0 + rho * g[i])
        if r > b:
            if rho > (exp2(2.0 * b) - 1.0) / g[i]:
                rho = (exp2(2.0 * b) - 1.0) / g[i]
            r = 0.5 * log2(1.0 + rho * g[i])
            if r > b:
                r = b
        water[i] = w
        power[i] = rho
        rate[i] = r
        resid[i] = res
        conv[i] = ok
        e = (e - rho if e - rho > 0.0 else 0.0) + (H[i + 1] if i + 1 < n else 0.0)
        b = (b - r if b - r > 0.0 else 0.0) + (B[i + 1] if i + 1 < n else 0.0)
    return water, power, rate, iters, resid, conv


def solve_general_trace(double e1, double b1, harvests, arrivals, gains, str rate,
                        double tol=1e-10, int max_iter=200, bint accelerate=True,
                        int n_solve=-1):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] H = np.ascontiguousarray(harvests, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] B = np.ascontiguousarray(arrivals, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] g = np.ascontiguousarray(gains, dtype=np.float64)
    cdef int n = g.shape[0]
    cdef int m = n if n_solve < 0 or n_solve > n else n_solve
    cdef cnp.ndarray[cnp.float64_t, ndim=1] inv = 1.0 / g
    cdef cnp.ndarray[cnp.float64_t, ndim=1] e_num = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] b_num = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] water = np.zeros(m)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] power = np.zeros(m)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] rate_out = np.zeros(m)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] iters = np.zeros(m, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] resid = np.zeros(m)
    cdef cnp.ndarray[cnp.npy_bool, ndim=1, cast=True] conv = np.ones(m, dtype=bool)
    cdef MapCtx c
    cdef double e = e1, b = b1, seed, maxinv, maxg, acc_h, acc_b, w, res, rho, r, cap
    cdef bint ok
    cdef int i, l, k
    c.kind = GEN_KIND
    c.rate = _RATE_CODES[rate]
    for i in range(m):
        k = n - i
        c.k = k
        c.data_limited = not isinf(b)
        acc_h = 0.0
        acc_b = 0.0
        maxinv = 0.0
        maxg = 0.0
        for l in range(k):
            if l > 0:
                acc_h += H[i + l]
                acc_b += B[i + l]
            e_num[l] = e + acc_h
            b_num[l] = b + acc_b
            if inv[i + l] > maxinv:
                maxinv = inv[i + l]
            if g[i + l] > maxg:
                maxg = g[i + l]
        c.e_num = &e_num[0]
        c.b_num = &b_num[0]
        c.inv = &inv[i]
        if c.rate == RATE_SQRT:
            seed = sqrt(1.0 + (e + acc_h) * maxg) / maxg + maxinv
        else:
            seed = (1.0 + (e + acc_h) * maxg) / maxg + maxinv
        iters[i] = solve_fp(&c, seed, tol, max_iter, accelerate, &w, &res, &ok)
        if w * g[i] > 1.0:
            rho = (rate_level(c.rate, w * g[i]) - 1.0) / g[i]
        else:
            rho = 0.0
        if rho > e:
            rho = e
        r = rate_eval(c.rate, 1.0 + rho * g[i])
        if r > b:
            cap = (rate_inverse(c.rate, b) - 1.0) / g[i]
            if cap < 0.0:
                cap = 0.0
            if rho > cap:
                rho = cap
            r = rate_eval(c.rate, 1.0 + rho * g[i])
            if r > b:
                r = b
        water[i] = w
        power[i] = rho
        rate_out[i] = r
        resid[i] = res
        conv[i] = ok
        e = (e - rho if e - rho > 0.0 else 0.0) + (H[i + 1] if i + 1 < n else 0.0)
        b = (b - r if b - r > 0.0 else 0.0) + (B[i + 1] if i + 1 < n else 0.0)
    return water, power, rate_out, iters, resid, conv


def heuristic_water(double e, double b, double a, double bt, inv_gain_hist,
                    double tol=1e-10, int max_iter=200):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] inv = np.ascontiguousarray(inv_gain_hist, dtype=np.float64)
    cdef MapCtx c
    cdef double w, res, seed
    cdef bint ok
    cdef int n_it
    if e <= 0.0:
        return 0.0, 0, True
    c.kind = HEUR_KIND
    c.k = inv.shape[0]
    c.inv = &inv[0]
    c.e = e
    c.b = b
    c.a = a
    c.bt = bt
    c.data_limited = not isinf(bt)
    seed = e if 2.0 * b >= log2(e) else exp2(2.0 * b)
    n_it = solve_fp(&c, seed, tol, max_iter, True, &w, &res, &ok)
    return w, n_it, ok


def static_offline_power(e, harvests):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] H = np.atleast_2d(np.ascontiguousarray(harvests, dtype=np.float64))
    cdef int r = H.shape[0], k = H.shape[1], i, u
    cdef cnp.ndarray[cnp.float64_t, ndim=1] E = np.ascontiguousarray(
        np.broadcast_to(np.asarray(e, dtype=np.float64).reshape(-1), (r,)))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(r)
    cdef double acc, best, v
    for i in range(r):
        acc = E[i]
        best = acc
        for u in range(k):
            acc += H[i, u]
            v = acc / (u + 2.0)
            if v < best:
                best = v
        out[i] = best
    return out
