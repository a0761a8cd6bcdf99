"""numba versions of the convex cost and the two descent loops.

They mirror ``cost.convex_objective`` and the ``"python"`` backend loops in
``solver`` step for step; the test suite checks the two against each other.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

QUADRATIC, ABSOLUTE, HUBER = 0, 1, 2
FAMILY_CODES = {"quadratic": QUADRATIC, "absolute": ABSOLUTE, "huber": HUBER}

# status codes returned by the loops
CONVERGED, MAX_ITERS, LINE_SEARCH_FAILED, NON_FINITE = 0, 1, 2, 3

_EPS = np.finfo(np.float64).eps


@njit(cache=True)
def convex_eval(x, ti, tj, offsets, measured, radius, family, grad, want_grad):
    n, p = x.shape
    if want_grad:
        grad[:, :] = 0.0
    total = 0.0
    diff = np.empty(p)
    for t in range(ti.shape[0]):
        i = ti[t]
        j = tj[t]
        d2 = 0.0
        for c in range(p):
            if j >= 0:
                v = x[i, c] - x[j, c]
            else:
                v = x[i, c] - offsets[t, c]
            diff[c] = v
            d2 += v * v
        dist = math.sqrt(d2)
        delta = dist - measured[t]
        if not delta > 0.0:
            continue
        if family == QUADRATIC:
            val = delta * delta
            der = 2.0 * delta
        elif family == ABSOLUTE:
            val = delta
            der = 1.0
        else:
            R = radius[t]
            if delta <= R:
                val = delta * delta
                der = 2.0 * delta
            else:
                val = 2.0 * R * delta - R * R
                der = 2.0 * R
        total += val
        if want_grad:
            coef = der / dist
            for c in range(p):
                grad[i, c] += coef * diff[c]
                if j >= 0:
                    grad[j, c] -= coef * diff[c]
    return total


@njit(cache=True)
def _norm(a):
    s = 0.0
    for v in a.ravel():
        s += v * v
    return math.sqrt(s)


@njit(cache=True)
def descend(
    x0, ti, tj, offsets, measured, radius, family, max_iters, tol, alpha_max, beta, c, fixed, trace
):
    x = x0.copy()
    g = np.zeros_like(x)
    gt = np.zeros_like(x)
    fx = convex_eval(x, ti, tj, offsets, measured, radius, family, g, True)
    trace[0] = fx
    it = 0
    alpha = alpha_max
    gnorm = _norm(g)
    status = MAX_ITERS
    while True:
        if not math.isfinite(fx):
            status = NON_FINITE
            break
        if gnorm <= tol:
            status = CONVERGED
            break
        if it >= max_iters:
            status = MAX_ITERS
            break
        if fixed:
            x = x - alpha_max * g
        else:
            a = min(alpha_max, alpha / beta)
            slack = 8.0 * _EPS * abs(fx)
            d2 = gnorm * gnorm
            accepted = False
            while a >= 1e-16:
                xt = x - a * g
                ft = convex_eval(xt, ti, tj, offsets, measured, radius, family, gt, False)
                if ft <= fx - c * a * d2 + slack:
                    accepted = True
                    break
                a *= beta
            if not accepted:
                status = LINE_SEARCH_FAILED
                break
            alpha = a
            x = xt
        fx = convex_eval(x, ti, tj, offsets, measured, radius, family, g, True)
        it += 1
        trace[it] = fx
        gnorm = _norm(g)
    return x, fx, it, status, gnorm


@njit(cache=True)
def subgradient(x0, ti, tj, offsets, measured, radius, family, max_iters, tol, alpha0, window, trace):
    x = x0.copy()
    g = np.zeros_like(x)
    fx = convex_eval(x, ti, tj, offsets, measured, radius, family, g, True)
    trace[0] = fx
    best = x.copy()
    best_f = fx
    ring = np.empty((window,) + x.shape)
    ring[0] = x
    status = MAX_ITERS
    it = 0
    while it < max_iters:
        if not math.isfinite(fx):
            status = NON_FINITE
            break
        if _norm(g) == 0.0:
            status = CONVERGED
            break
        x = x - (alpha0 / math.sqrt(it + 1)) * g
        fx = convex_eval(x, ti, tj, offsets, measured, radius, family, g, True)
        it += 1
        trace[it] = fx
        if fx < best_f:
            best = x.copy()
            best_f = fx
        slot = it % window
        if it >= window:
            if _norm(x - ring[slot]) <= tol:
                status = CONVERGED
                break
        ring[slot] = x
    if not math.isfinite(fx):
        status = NON_FINITE
    return best, best_f, it, status
