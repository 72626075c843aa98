"""Randomized cross-module property suite.

``property_suite`` hammers one model/certificate pair with randomized
states, inflows, and merge priorities and reports every structural
property the rest of the package relies on: flow conservation, the
weighted discharge bound behind the drainage constant, monotone demand
and supply curves, state-box invariance, the equilibrium fixed point,
the free-flow cascade reduction, overshoot contraction, penalty
monotonicity, and the exponential trajectory envelope.  Like the
verification sweeps, failures are report content rather than exceptions.
"""

import numpy as np

from . import _kernels
from .control import StabilizingFeedback
from .lyapunov import (
    LyapunovFunction,
    VerificationReport,
    _Worst,
    _priority_rounds,
    check_excess_contraction,
    check_penalty_monotone,
    sample_states,
)
from .simulate import UniformDisturbance, simulate

__all__ = ["property_suite"]


def _position_weights(n):
    return np.arange(n, 0, -1, dtype=np.float64)


def _discharge_coeff(model):
    """Weights (1 + p_i (n - i)) that pair with per-cell outflows."""
    n = model.n
    return 1.0 + model.exit_splits * np.arange(n - 1, -1, -1, dtype=np.float64)


def _check_conservation(model, rng, n_samples, d_levels, n_random_d, rel_tol):
    """Weighted load moves exactly by accepted inflows minus discharges.

    For any state, commanded inflows, and priorities:
    load(x+) - load(x) = sum_i (n+1-i) w_i u_i - sum_i (1 + p_i (n-i)) out_i.
    """
    n = model.n
    iw = _position_weights(n)
    coeff = _discharge_coeff(model)
    X = sample_states(model, n_samples, rng)
    U = rng.uniform(size=(n_samples, n)) * (1.5 * model.inflow_caps)
    U[: min(200, n_samples)] *= 50.0
    load0 = X @ iw
    tol = rel_tol * np.maximum(1.0, np.abs(load0))
    tracker = _Worst("conservation")
    for D in _priority_rounds(n - 1, d_levels, n_random_d, rng, n_samples):
        X1, flows = model.step_batch(X, U, D)
        lhs = X1 @ iw - load0
        rhs = (flows.accept * U) @ iw - flows.outflow @ coeff
        diff = np.abs(lhs - rhs)
        tracker.update(tol - diff, 0.0, X, D, lhs, rhs)
    return tracker.result()


def _check_discharge_bound(model, cert, rng, n_samples, d_levels, n_random_d, rel_tol):
    """Weighted discharge dominates C times the weighted load.

    Holds for inflows with every metered ramp inside its residual box
    [0, u_i*] and any first-cell command.
    """
    n = model.n
    iw = _position_weights(n)
    coeff = _discharge_coeff(model)
    X = sample_states(model, n_samples, rng)
    U = np.asarray(cert.u_star) * rng.uniform(size=(n_samples, n))
    U[:, 0] = rng.uniform(size=n_samples) * (100.0 * model.inflow_caps[0])
    tracker = _Worst("weighted_discharge_bound")
    for D in _priority_rounds(n - 1, d_levels, n_random_d, rng, n_samples):
        X1, flows = model.step_batch(X, U, D)
        lhs = flows.outflow @ coeff
        rhs = cert.C * (X @ iw)
        tol = rel_tol * np.maximum(1.0, np.abs(rhs))
        tracker.update(lhs - rhs, tol, X, D, lhs, rhs)
    return tracker.result()


def _check_demand_monotone(model, rng, n_samples):
    """Each demand curve is non-decreasing up to its certified range."""
    tracker = _Worst("demand_monotone")
    per_cell = max(2, n_samples // model.n)
    for i, cell in enumerate(model.cells):
        z = np.sort(cell.demand.smooth_bound * rng.uniform(size=per_cell))
        f = np.array([cell.demand(v) for v in z])
        diffs = np.diff(f)
        X = np.column_stack([z[:-1], z[1:]])
        tracker.update(diffs, 1e-12, X, None, f[:-1], f[1:])
    return tracker.result()


def _check_supply_monotone(model, rng, n_samples):
    """Receiving capacity never grows with density."""
    tracker = _Worst("supply_monotone")
    X = np.sort(sample_states(model, n_samples, rng), axis=0)
    S = model.supply(X)
    margin = np.min(S[:-1] - S[1:], axis=1)
    tracker.update(margin, 1e-12, X[:-1], None, margin, np.zeros(len(margin)))
    return tracker.result()


def _check_box_invariance(model, rng, n_samples, d_levels, n_random_d):
    """One step never leaves the state box [0, jam]."""
    n = model.n
    X = np.vstack([sample_states(model, n_samples, rng), [model.jams]])
    m = X.shape[0]
    U = rng.uniform(size=(m, n)) * (2.0 * model.inflow_caps)
    tracker = _Worst("state_box_invariance")
    for D in _priority_rounds(n - 1, d_levels, n_random_d, rng, m):
        X1, _ = model.step_batch(X, U, D)
        margin = np.minimum(X1, model.jams - X1).min(axis=1)
        tracker.update(margin, 1e-12, X, D, margin, np.zeros(m))
    return tracker.result()


def _check_fixed_point(model, cert, rng, d_levels, n_random_d, rel_tol):
    """The synthesized equilibrium is a fixed point for every priority."""
    X = np.asarray(cert.x_star)[None, :]
    U = np.asarray(cert.u_star)[None, :]
    tracker = _Worst("equilibrium_fixed_point")
    for D in _priority_rounds(model.n - 1, d_levels, n_random_d, rng, 1):
        X1, _ = model.step_batch(X, U, D)
        diff = np.array([np.max(np.abs(X1 - X))])
        tracker.update(rel_tol - diff, 0.0, X, D, diff, np.full(1, rel_tol))
    return tracker.result()


def _check_cascade(model, cert, rng, n_samples, d_levels, n_random_d):
    """Inside the free-flow box the step reduces to the demand cascade.

    With states in (0, mu] and inflows in [0, u*] no receiving constraint
    binds, so x_i+ = x_i - f_i(x_i) + u_i + (1 - p_{i-1}) f_{i-1}(x_{i-1})
    exactly, for every merge priority.
    """
    n = model.n
    mu = np.asarray(cert.mu)
    X = mu * (1.0 - rng.uniform(size=(n_samples, n)))
    U = np.asarray(cert.u_star) * rng.uniform(size=(n_samples, n))
    F = _kernels.demand_batch(model.arrays, X)
    expected = np.empty_like(X)
    expected[:, 0] = (X[:, 0] - F[:, 0]) + U[:, 0]
    for i in range(1, n):
        carried = (1.0 - model.exit_splits[i - 1]) * F[:, i - 1]
        expected[:, i] = (X[:, i] - F[:, i]) + (U[:, i] + carried)
    tracker = _Worst("free_flow_cascade")
    for D in _priority_rounds(n - 1, d_levels, n_random_d, rng, n_samples):
        X1, _ = model.step_batch(X, U, D)
        diff = np.max(np.abs(X1 - expected), axis=1)
        tracker.update(1e-12 - diff, 0.0, X, D, diff, np.full(len(diff), 1e-12))
    return tracker.result()


def _check_envelope(model, cert, rng, n_runs, horizon, rel_tol):
    """Closed-loop distances stay under (K2 / K1) L_tilde^t of the start."""
    fb = StabilizingFeedback.from_certificate(cert)
    ratio = cert.K2 / cert.K1
    decay = cert.L_tilde ** np.arange(horizon + 1, dtype=np.float64)
    tracker = _Worst("trajectory_envelope")
    for _ in range(n_runs):
        x0 = sample_states(model, 1, rng)[0]
        rec = simulate(
            model,
            fb,
            x0,
            horizon,
            disturbance=UniformDisturbance(seed=int(rng.integers(2**31))),
            x_star=np.asarray(cert.x_star),
        )
        bound = ratio * decay * rec.dist_to_eq[0]
        tol = rel_tol * np.maximum(1.0, bound)
        tracker.update(bound - rec.dist_to_eq, tol, rec.x, None, rec.dist_to_eq, bound)
    return tracker.result()


def property_suite(
    model,
    cert,
    *,
    n_samples=10_000,
    seed=42,
    d_levels=(0.0, 0.5, 1.0),
    n_random_d=3,
    n_runs=100,
    run_horizon=50,
    rel_tol=1e-9,
):
    """Run every cross-module property and bundle the results.

    Uses one seeded generator throughout, so identical arguments yield
    identical reports.  The returned report carries one named check per
    property; ``report.passed`` is the conjunction.
    """
    rng = np.random.default_rng(seed)
    lyap = LyapunovFunction.from_certificate(cert)
    checks = (
        _check_conservation(model, rng, n_samples, d_levels, n_random_d, rel_tol),
        _check_discharge_bound(
            model, cert, rng, n_samples, d_levels, n_random_d, rel_tol
        ),
        _check_demand_monotone(model, rng, n_samples),
        _check_supply_monotone(model, rng, n_samples),
        _check_box_invariance(model, rng, n_samples, d_levels, n_random_d),
        _check_fixed_point(model, cert, rng, d_levels, n_random_d, rel_tol),
        _check_cascade(model, cert, rng, n_samples, d_levels, n_random_d),
        check_excess_contraction(
            model,
            lyap,
            cert,
            n_samples=n_samples,
            seed=seed,
            d_levels=d_levels,
            n_random_d=n_random_d,
            rel_tol=rel_tol,
        ),
        check_penalty_monotone(
            model,
            lyap,
            cert,
            n_samples=n_samples,
            seed=seed,
            d_levels=d_levels,
            n_random_d=n_random_d,
            rel_tol=rel_tol,
        ),
        _check_envelope(model, cert, rng, n_runs, run_horizon, rel_tol),
    )
    return VerificationReport(checks=checks)
