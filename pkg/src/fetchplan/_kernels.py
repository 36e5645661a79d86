"""Numerical hot loops, compiled with numba when available.

Set ``FETCHPLAN_NO_NUMBA=1`` to force the pure-numpy/python fallback path
(used by the benchmark suite to compare both). Every kernel has identical
semantics on both paths; callers never need to know which one is active.
"""

from __future__ import annotations

import math
import os

import numpy as np

USE_NUMBA = os.environ.get("FETCHPLAN_NO_NUMBA", "0") not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        from numba import njit, prange
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False

if not USE_NUMBA:
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

    prange = range


@njit(cache=True)
def _fourier_point(s, f1, f2, a1, a2, p1, p2):
    """Position of the Fourier curve at parameter s."""
    w1 = 4.0 * math.pi ** 2 * f1
    w2 = 4.0 * math.pi ** 2 * f2
    c1 = a1[0]
    for g in range(1, a1.shape[0]):
        c1 += a1[g] * math.sin(w1 * g * s + p1[g - 1])
    c2 = a2[0]
    for g in range(1, a2.shape[0]):
        c2 += a2[g] * math.sin(w2 * g * s + p2[g - 1])
    return c1, c2


@njit(cache=True, parallel=True)
def nearest_on_curve(targets, seed_s, seed_c, refine, f1, f2, a1, a2, p1, p2, refine_iters):
    """Per-target minimisation of distance to the curve over s in [0, 1].

    Seeds from the argmin over the shared precomputed samples ``seed_c`` at
    parameters ``seed_s``, then (where ``refine`` is set) ternary-refines
    inside the bracketing cells using analytic curve evaluations. Returns
    (s_star, d_star) arrays.
    """
    m = targets.shape[0]
    n = seed_s.shape[0]
    s_out = np.empty(m)
    d_out = np.empty(m)
    for k in prange(m):
        tx = targets[k, 0]
        ty = targets[k, 1]
        best_i = 0
        best_d2 = 1e300
        for i in range(n):
            d2 = (seed_c[i, 0] - tx) ** 2 + (seed_c[i, 1] - ty) ** 2
            if d2 < best_d2:
                best_d2 = d2
                best_i = i
        s_best = seed_s[best_i]
        d2_best = best_d2
        if refine[k]:
            lo = seed_s[best_i - 1] if best_i > 0 else seed_s[0]
            hi = seed_s[best_i + 1] if best_i < n - 1 else seed_s[n - 1]
            for _ in range(refine_iters):
                m1 = lo + (hi - lo) / 3.0
                m2 = hi - (hi - lo) / 3.0
                c1, c2 = _fourier_point(m1, f1, f2, a1, a2, p1, p2)
                f_m1 = (c1 - tx) ** 2 + (c2 - ty) ** 2
                c1, c2 = _fourier_point(m2, f1, f2, a1, a2, p1, p2)
                f_m2 = (c1 - tx) ** 2 + (c2 - ty) ** 2
                if f_m1 < f_m2:
                    hi = m2
                else:
                    lo = m1
            cand = 0.5 * (lo + hi)
            c1, c2 = _fourier_point(cand, f1, f2, a1, a2, p1, p2)
            d2 = (c1 - tx) ** 2 + (c2 - ty) ** 2
            if d2 < d2_best:
                s_best = cand
                d2_best = d2
        s_out[k] = s_best
        d_out[k] = math.sqrt(d2_best)
    return s_out, d_out


def _nearest_on_curve_numpy(targets, seed_s, seed_c, refine, f1, f2, a1, a2, p1, p2, refine_iters):
    w1 = 4.0 * np.pi ** 2 * f1
    w2 = 4.0 * np.pi ** 2 * f2
    g1 = np.arange(1, a1.shape[0])
    g2 = np.arange(1, a2.shape[0])

    def dist2_at(sv, tg):
        cc1 = a1[0] + (a1[1:, None] * np.sin(w1 * g1[:, None] * sv[None, :] + p1[:, None])).sum(0)
        cc2 = a2[0] + (a2[1:, None] * np.sin(w2 * g2[:, None] * sv[None, :] + p2[:, None])).sum(0)
        return (cc1 - tg[:, 0]) ** 2 + (cc2 - tg[:, 1]) ** 2

    d2 = ((seed_c[None, :, :] - targets[:, None, :]) ** 2).sum(-1)
    best = np.argmin(d2, axis=1)
    d2_best = d2[np.arange(targets.shape[0]), best]
    s_best = seed_s[best]
    which = np.flatnonzero(refine)
    if which.size:
        tg = targets[which]
        b = best[which]
        lo = seed_s[np.maximum(b - 1, 0)]
        hi = seed_s[np.minimum(b + 1, seed_s.shape[0] - 1)]
        for _ in range(refine_iters):
            m1 = lo + (hi - lo) / 3.0
            m2 = hi - (hi - lo) / 3.0
            take = dist2_at(m1, tg) < dist2_at(m2, tg)
            hi = np.where(take, m2, hi)
            lo = np.where(take, lo, m1)
        cand = 0.5 * (lo + hi)
        d2_ref = dist2_at(cand, tg)
        better = d2_ref < d2_best[which]
        s_best[which] = np.where(better, cand, s_best[which])
        d2_best[which] = np.minimum(d2_ref, d2_best[which])
    return s_best, np.sqrt(d2_best)


@njit(cache=True)
def velocity_envelope(s, cap_sq, rest, two_g, v0_sq, vf_sq):
    """Squared-speed profile over one stop-to-stop interval (s possibly
    non-uniform).

    Forward pass bounds acceleration by ``two_g`` per unit s from the start
    speed, the backward pass bounds deceleration symmetrically from the end
    speed and every marked rest node, and the pointwise cap (curvature limit
    or exploration law) applies throughout.
    """
    n = s.shape[0]
    v2 = np.empty(n)
    v2[0] = 0.0 if rest[0] else min(v0_sq, cap_sq[0])
    for i in range(1, n):
        ds = s[i] - s[i - 1]
        v2[i] = v2[i - 1] + two_g * ds
        if v2[i] > cap_sq[i]:
            v2[i] = cap_sq[i]
        if rest[i]:
            v2[i] = 0.0
    if rest[n - 1]:
        v2[n - 1] = 0.0
    elif v2[n - 1] > vf_sq:
        v2[n - 1] = vf_sq
    for i in range(n - 2, -1, -1):
        ds = s[i + 1] - s[i]
        lim = v2[i + 1] + two_g * ds
        if v2[i] > lim:
            v2[i] = lim
    return v2


def _velocity_envelope_numpy(s, cap_sq, rest, two_g, v0_sq, vf_sq):
    n = s.shape[0]
    v2 = np.empty(n)
    v2[0] = 0.0 if rest[0] else min(v0_sq, cap_sq[0])
    for i in range(1, n):
        v2[i] = min(v2[i - 1] + two_g * (s[i] - s[i - 1]), cap_sq[i])
        if rest[i]:
            v2[i] = 0.0
    if rest[n - 1]:
        v2[n - 1] = 0.0
    else:
        v2[n - 1] = min(v2[n - 1], vf_sq)
    for i in range(n - 2, -1, -1):
        v2[i] = min(v2[i], v2[i + 1] + two_g * (s[i + 1] - s[i]))
    return v2


@njit(cache=True)
def velocity_envelope_grad(s, cap_sq, cap_grad, rest, two_g, grad_two_g, v0_sq, vf_sq):
    """Envelope plus its parameter gradient, chain-ruled through both passes.

    ``cap_grad`` holds d(cap_sq)/d(theta) per node; ``grad_two_g`` is
    d(two_g)/d(theta). Rest nodes and the (frozen) start speed carry zero
    gradient. Returns (v2, dv2) with dv2 of shape (n, a).
    """
    n = s.shape[0]
    a = cap_grad.shape[1]
    v2 = np.empty(n)
    dv2 = np.zeros((n, a))
    if rest[0]:
        v2[0] = 0.0
    elif v0_sq <= cap_sq[0]:
        v2[0] = v0_sq
    else:
        v2[0] = cap_sq[0]
        dv2[0] = cap_grad[0]
    for i in range(1, n):
        ds = s[i] - s[i - 1]
        cand = v2[i - 1] + two_g * ds
        if cand <= cap_sq[i]:
            v2[i] = cand
            for j in range(a):
                dv2[i, j] = dv2[i - 1, j] + ds * grad_two_g[j]
        else:
            v2[i] = cap_sq[i]
            for j in range(a):
                dv2[i, j] = cap_grad[i, j]
        if rest[i]:
            v2[i] = 0.0
            for j in range(a):
                dv2[i, j] = 0.0
    if rest[n - 1]:
        v2[n - 1] = 0.0
        for j in range(a):
            dv2[n - 1, j] = 0.0
    elif v2[n - 1] > vf_sq:
        v2[n - 1] = vf_sq
        for j in range(a):
            dv2[n - 1, j] = 0.0
    for i in range(n - 2, -1, -1):
        ds = s[i + 1] - s[i]
        lim = v2[i + 1] + two_g * ds
        if v2[i] > lim:
            v2[i] = lim
            for j in range(a):
                dv2[i, j] = dv2[i + 1, j] + ds * grad_two_g[j]
    return v2, dv2


def _velocity_envelope_grad_numpy(s, cap_sq, cap_grad, rest, two_g, grad_two_g, v0_sq, vf_sq):
    n = s.shape[0]
    v2 = np.empty(n)
    dv2 = np.zeros((n, cap_grad.shape[1]))
    if rest[0]:
        v2[0] = 0.0
    elif v0_sq <= cap_sq[0]:
        v2[0] = v0_sq
    else:
        v2[0] = cap_sq[0]
        dv2[0] = cap_grad[0]
    for i in range(1, n):
        ds = s[i] - s[i - 1]
        cand = v2[i - 1] + two_g * ds
        if cand <= cap_sq[i]:
            v2[i] = cand
            dv2[i] = dv2[i - 1] + ds * grad_two_g
        else:
            v2[i] = cap_sq[i]
            dv2[i] = cap_grad[i]
        if rest[i]:
            v2[i] = 0.0
            dv2[i] = 0.0
    if rest[n - 1]:
        v2[n - 1] = 0.0
        dv2[n - 1] = 0.0
    elif v2[n - 1] > vf_sq:
        v2[n - 1] = vf_sq
        dv2[n - 1] = 0.0
    for i in range(n - 2, -1, -1):
        ds = s[i + 1] - s[i]
        lim = v2[i + 1] + two_g * ds
        if v2[i] > lim:
            v2[i] = lim
            dv2[i] = dv2[i + 1] + ds * grad_two_g
    return v2, dv2


@njit(cache=True, parallel=True)
def worst_case_scan(cand, n_cand, strings_wp, strings_len, strings_mass, known, y0):
    """Max over placement hypotheses of the min string cost.

    cand        : (k, M_max, 2) candidate positions per undetected object
    n_cand      : (k,) number of valid candidates per object
    strings_wp  : (S, d_max) waypoint codes; 0..k-1 undetected slots,
                  k.. known positions, -1 depot, -2 padding
    strings_len : (S,) waypoint count per string
    strings_mass: (S, d_max) mass during each leg
    known       : (n_known, 2) positions of detected, uncollected objects
    y0          : (2,) start position
    Returns (best flat hypothesis index, value).
    """
    k = cand.shape[0]
    total = 1
    for j in range(k):
        total *= n_cand[j]
    n_s = strings_wp.shape[0]
    vals = np.empty(total)
    for flat in prange(total):
        pos = np.empty((k, 2))
        rem = flat
        for j in range(k):
            idx = rem % n_cand[j]
            rem //= n_cand[j]
            pos[j, 0] = cand[j, idx, 0]
            pos[j, 1] = cand[j, idx, 1]
        mincost = 1e300
        for si in range(n_s):
            cost = 0.0
            px = y0[0]
            py = y0[1]
            for li in range(strings_len[si]):
                wp = strings_wp[si, li]
                if wp == -1:
                    qx = 0.0
                    qy = 0.0
                elif wp < k:
                    qx = pos[wp, 0]
                    qy = pos[wp, 1]
                else:
                    qx = known[wp - k, 0]
                    qy = known[wp - k, 1]
                d = math.sqrt((qx - px) ** 2 + (qy - py) ** 2)
                cost += 2.0 * math.sqrt(strings_mass[si, li] * d)
                px = qx
                py = qy
            if cost < mincost:
                mincost = cost
        vals[flat] = mincost
    best_idx = np.argmax(vals)
    return best_idx, vals[best_idx]


def _worst_case_scan_numpy(cand, n_cand, strings_wp, strings_len, strings_mass, known, y0):
    k = cand.shape[0]
    total = int(np.prod(n_cand))
    best_val = -1.0
    best_idx = -1
    for flat in range(total):
        pos = np.empty((k, 2))
        rem = flat
        for j in range(k):
            idx = rem % n_cand[j]
            rem //= n_cand[j]
            pos[j] = cand[j, idx]
        mincost = np.inf
        for si in range(strings_wp.shape[0]):
            cost = 0.0
            p = y0
            for li in range(strings_len[si]):
                wp = strings_wp[si, li]
                if wp == -1:
                    q = np.zeros(2)
                elif wp < k:
                    q = pos[wp]
                else:
                    q = known[wp - k]
                cost += 2.0 * math.sqrt(strings_mass[si, li] * float(np.linalg.norm(q - p)))
                p = q
            mincost = min(mincost, cost)
        if mincost > best_val:
            best_val = mincost
            best_idx = flat
    return best_idx, best_val


if not USE_NUMBA:
    nearest_on_curve = _nearest_on_curve_numpy
    velocity_envelope = _velocity_envelope_numpy
    velocity_envelope_grad = _velocity_envelope_grad_numpy
    worst_case_scan = _worst_case_scan_numpy
