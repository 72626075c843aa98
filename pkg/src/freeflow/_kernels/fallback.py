"""Reference batch kernels written with numpy elementwise ops.

Each function loops over cells in order and vectorises over sample rows,
so every accumulation happens left to right in cell order.  The compiled
backend mirrors the exact arithmetic expressions used here, which keeps
the two backends bit-identical without any tolerance fudging.
"""

import numpy as np

BACKEND_NAME = "python"


def eval_demand(zs, fs, ms, x):
    """Piecewise-linear table lookup, vectorised over ``x``.

    ``zs``/``fs`` are one cell's breakpoints, ``ms`` the segment slopes.
    Matches the scalar evaluation: exact table value at and beyond the
    last breakpoint, otherwise ``f0 + (x - z0) * slope`` on the segment
    found by a rightmost-not-above search.
    """
    j = np.searchsorted(zs, x, side="right") - 1
    np.clip(j, 0, len(ms) - 1, out=j)
    f = fs[j] + (x - zs[j]) * ms[j]
    return np.where(x >= zs[-1], fs[-1], f)


def demand_batch(ma, X):
    """Evaluate every cell's demand curve: ``F[k, i] = f_i(X[k, i])``."""
    m = X.shape[0]
    F = np.empty((m, ma.n))
    for i in range(ma.n):
        lo, hi = ma.boff[i], ma.boff[i + 1]
        slo, shi = ma.soff[i], ma.soff[i + 1]
        F[:, i] = eval_demand(ma.zs[lo:hi], ma.fs[lo:hi], ma.ms[slo:shi], X[:, i])
    return F


def step_batch(ma, X, U, D):
    """Advance every state row one step under its control and priority row.

    Returns ``(X1, FIN, FOUT, S, W)``:

    * ``X1``   next states, ``(x - outflow) + inflow`` per cell,
    * ``FIN``  total accepted inflow per cell,
    * ``FOUT`` total outflow per cell,
    * ``S``    pass-through fractions at interfaces 2..n,
    * ``W``    accepted fraction of each commanded ramp inflow.
    """
    m, n = X.shape
    F = demand_batch(ma, X)

    FIN = np.empty((m, n))
    FOUT = np.empty((m, n))
    S = np.empty((m, n - 1))
    W = np.empty((m, n))
    ones = np.ones(m)

    sup = np.minimum(ma.q[0], ma.c[0] * (ma.a[0] - X[:, 0]))
    FIN[:, 0] = np.minimum(sup, U[:, 0])
    has_ramp = U[:, 0] > 0.0
    w0 = np.divide(FIN[:, 0], U[:, 0], out=ones.copy(), where=has_ramp)
    W[:, 0] = np.where(has_ramp, w0, 1.0)

    for i in range(1, n):
        sup = np.minimum(ma.q[i], ma.c[i] * (ma.a[i] - X[:, i]))
        updem = (1.0 - ma.p[i - 1]) * F[:, i - 1]
        feeding = updem > 0.0
        s_yield = np.divide(sup - U[:, i], updem, out=ones.copy(), where=feeding)
        s_yield = np.minimum(1.0, np.maximum(0.0, s_yield))
        s_take = np.divide(sup, updem, out=ones.copy(), where=feeding)
        s_take = np.minimum(1.0, s_take)
        s = s_yield + D[:, i - 1] * (s_take - s_yield)
        S[:, i - 1] = np.where(feeding, s, 1.0)

        FIN[:, i] = np.minimum(sup, U[:, i] + updem)
        carried = S[:, i - 1] * updem
        has_ramp = U[:, i] > 0.0
        wi = np.divide(FIN[:, i] - carried, U[:, i], out=ones.copy(), where=has_ramp)
        wi = np.minimum(1.0, np.maximum(0.0, wi))
        W[:, i] = np.where(has_ramp, wi, 1.0)

    for i in range(n - 1):
        FOUT[:, i] = S[:, i] * F[:, i]
    FOUT[:, n - 1] = F[:, n - 1]

    X1 = (X - FOUT) + FIN
    return X1, FIN, FOUT, S, W


def xi_batch(wpow, x_star, X):
    """Weighted overshoot ``sum_i wpow[i] * max(0, x_i - x_star[i])`` per row."""
    acc = np.zeros(X.shape[0])
    for i in range(X.shape[1]):
        acc = acc + wpow[i] * np.maximum(0.0, X[:, i] - x_star[i])
    return acc


def value_batch(x_star, wpow, iw, a_weight, k_weight, q_level, theta, h, X):
    """Certificate value per row.

    ``base + a_weight * xi + k_weight * max(0, load - (q_level - theta * min(h, xi)))``
    with ``base`` the weighted absolute deviation, ``xi`` the weighted
    overshoot, and ``load`` the position-weighted total density.
    """
    m, n = X.shape
    base = np.zeros(m)
    xi = np.zeros(m)
    load = np.zeros(m)
    for i in range(n):
        dev = X[:, i] - x_star[i]
        base = base + wpow[i] * np.abs(dev)
        xi = xi + wpow[i] * np.maximum(0.0, dev)
        load = load + iw[i] * X[:, i]
    cap = q_level - theta * np.minimum(h, xi)
    return base + a_weight * xi + k_weight * np.maximum(0.0, load - cap)
