# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled batch kernels.

Mirrors fallback.py expression for expression: every floating-point
operation happens in the same order with the same operands, which keeps
the two backends bit-identical.  The build must therefore preserve IEEE
semantics: plain -O3, no fast-math, and floating contraction disabled
(an FMA would round differently than the separate multiply and add the
numpy path performs).
"""

import numpy as np

from libc.math cimport fabs

BACKEND_NAME = "compiled"


cdef inline double _demand_at(
    const double[::1] zs,
    const double[::1] fs,
    const double[::1] ms,
    Py_ssize_t lo,
    Py_ssize_t hi,
    Py_ssize_t slo,
    double x,
) noexcept nogil:
    """One cell's table lookup; segment bounds are [lo, hi) into zs/fs.

    Matches eval_demand: exact table value at and beyond the last
    breakpoint, otherwise ``f0 + (x - z0) * slope`` on the rightmost
    segment whose left breakpoint is not above x (the first segment
    extrapolates below zero, which the state box makes unreachable).
    """
    cdef Py_ssize_t j = lo
    if x >= zs[hi - 1]:
        return fs[hi - 1]
    while j + 1 < hi - 1 and zs[j + 1] <= x:
        j += 1
    return fs[j] + (x - zs[j]) * ms[slo + (j - lo)]


def demand_batch(ma, X):
    """Evaluate every cell's demand curve: ``F[k, i] = f_i(X[k, i])``."""
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] zs = ma.zs
    cdef const double[::1] fs = ma.fs
    cdef const double[::1] ms = ma.ms
    cdef const Py_ssize_t[::1] boff = ma.boff
    cdef const Py_ssize_t[::1] soff = ma.soff
    cdef Py_ssize_t m = Xv.shape[0], n = ma.n, k, i

    F = np.empty((m, n))
    cdef double[:, ::1] Fv = F
    with nogil:
        for k in range(m):
            for i in range(n):
                Fv[k, i] = _demand_at(
                    zs, fs, ms, boff[i], boff[i + 1], soff[i], Xv[k, i]
                )
    return F


def step_batch(ma, X, U, D):
    """Advance every state row one step under its control and priority row.

    Same contract and arithmetic as the numpy path: returns
    ``(X1, FIN, FOUT, S, W)``.
    """
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] Uv = np.ascontiguousarray(U, dtype=np.float64)
    cdef const double[:, ::1] Dv = np.ascontiguousarray(D, dtype=np.float64)
    cdef const double[::1] a = ma.a
    cdef const double[::1] c = ma.c
    cdef const double[::1] q = ma.q
    cdef const double[::1] p = ma.p
    cdef const double[::1] zs = ma.zs
    cdef const double[::1] fs = ma.fs
    cdef const double[::1] ms = ma.ms
    cdef const Py_ssize_t[::1] boff = ma.boff
    cdef const Py_ssize_t[::1] soff = ma.soff
    cdef Py_ssize_t m = Xv.shape[0], n = Xv.shape[1], k, i

    X1 = np.empty((m, n))
    FIN = np.empty((m, n))
    FOUT = np.empty((m, n))
    S = np.empty((m, n - 1))
    W = np.empty((m, n))
    F = np.empty((m, n))
    cdef double[:, ::1] X1v = X1, FINv = FIN, FOUTv = FOUT, Sv = S, Wv = W, Fv = F
    cdef double sup, tmp, u, fin, updem, sy, st, s, tot, carried, w

    with nogil:
        for k in range(m):
            for i in range(n):
                Fv[k, i] = _demand_at(
                    zs, fs, ms, boff[i], boff[i + 1], soff[i], Xv[k, i]
                )

            sup = q[0]
            tmp = c[0] * (a[0] - Xv[k, 0])
            if tmp < sup:
                sup = tmp
            u = Uv[k, 0]
            fin = sup
            if u < fin:
                fin = u
            FINv[k, 0] = fin
            if u > 0.0:
                Wv[k, 0] = fin / u
            else:
                Wv[k, 0] = 1.0

            for i in range(1, n):
                sup = q[i]
                tmp = c[i] * (a[i] - Xv[k, i])
                if tmp < sup:
                    sup = tmp
                u = Uv[k, i]
                updem = (1.0 - p[i - 1]) * Fv[k, i - 1]
                if updem > 0.0:
                    sy = (sup - u) / updem
                    if sy < 0.0:
                        sy = 0.0
                    if sy > 1.0:
                        sy = 1.0
                    st = sup / updem
                    if st > 1.0:
                        st = 1.0
                    s = sy + Dv[k, i - 1] * (st - sy)
                else:
                    s = 1.0
                Sv[k, i - 1] = s

                tot = u + updem
                fin = sup
                if tot < fin:
                    fin = tot
                FINv[k, i] = fin
                carried = s * updem
                if u > 0.0:
                    w = (fin - carried) / u
                    if w < 0.0:
                        w = 0.0
                    if w > 1.0:
                        w = 1.0
                    Wv[k, i] = w
                else:
                    Wv[k, i] = 1.0

            for i in range(n - 1):
                FOUTv[k, i] = Sv[k, i] * Fv[k, i]
            FOUTv[k, n - 1] = Fv[k, n - 1]

            for i in range(n):
                X1v[k, i] = (Xv[k, i] - FOUTv[k, i]) + FINv[k, i]

    return X1, FIN, FOUT, S, W


def xi_batch(wpow, x_star, X):
    """Weighted overshoot ``sum_i wpow[i] * max(0, x_i - x_star[i])`` per row."""
    cdef const double[::1] wp = np.ascontiguousarray(wpow, dtype=np.float64)
    cdef const double[::1] xs = np.ascontiguousarray(x_star, dtype=np.float64)
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t m = Xv.shape[0], n = Xv.shape[1], k, i
    cdef double acc, dev, pos

    out = np.empty(m)
    cdef double[::1] outv = out
    with nogil:
        for k in range(m):
            acc = 0.0
            for i in range(n):
                dev = Xv[k, i] - xs[i]
                pos = dev if dev > 0.0 else 0.0
                acc = acc + wp[i] * pos
            outv[k] = acc
    return out


def value_batch(x_star, wpow, iw, a_weight, k_weight, q_level, theta, h, X):
    """Certificate value per row; see the numpy path for the formula."""
    cdef const double[::1] xs = np.ascontiguousarray(x_star, dtype=np.float64)
    cdef const double[::1] wp = np.ascontiguousarray(wpow, dtype=np.float64)
    cdef const double[::1] iwv = np.ascontiguousarray(iw, dtype=np.float64)
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef double aw = a_weight, kw = k_weight, ql = q_level, th = theta, hh = h
    cdef Py_ssize_t m = Xv.shape[0], n = Xv.shape[1], k, i
    cdef double base, xi, load, dev, pos, mn, cap, ex

    out = np.empty(m)
    cdef double[::1] outv = out
    with nogil:
        for k in range(m):
            base = 0.0
            xi = 0.0
            load = 0.0
            for i in range(n):
                dev = Xv[k, i] - xs[i]
                pos = dev if dev > 0.0 else 0.0
                base = base + wp[i] * fabs(dev)
                xi = xi + wp[i] * pos
                load = load + iwv[i] * Xv[k, i]
            mn = hh
            if xi < mn:
                mn = xi
            cap = ql - th * mn
            ex = load - cap
            if ex < 0.0:
                ex = 0.0
            outv[k] = base + aw * xi + kw * ex
    return out
