"""Piecewise-linear Lyapunov certificate and numerical verification sweeps.

The certificate value combines three ingredients built from the synthesis
constants: a geometrically weighted absolute deviation from the target
equilibrium, the weighted overshoot that the feedback law also reads, and
a penalty on the position-weighted total density whenever it exceeds a
level that shrinks with the overshoot.  ``verify_decrease`` and
``verify_sandwich`` sweep randomized states and merge-priority draws and
return structured reports; counterexamples are report content, never
exceptions.
"""

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _kernels
from .errors import SynthesisError

__all__ = [
    "LyapunovFunction",
    "CheckResult",
    "VerificationReport",
    "verify_decrease",
    "verify_sandwich",
    "check_excess_contraction",
    "check_penalty_monotone",
    "sample_states",
]


@dataclass(frozen=True)
class LyapunovFunction:
    """Certificate value function for a synthesized feedback law.

    ``value(x)`` is ``sum_i sigma^i |x_i - x_i*| + A * xi(x)
    + K * max(0, load(x) - penalty(x))`` where ``xi`` is the weighted
    overshoot ``sum_i sigma^i max(0, x_i - x_i*)``, ``load`` the
    position-weighted total density ``sum_i (n + 1 - i) x_i``, and
    ``penalty(x) = Q - slope * min(h, xi(x))`` the density level above
    which the load term activates.
    """

    x_star: tuple
    sigma: float
    weight_A: float
    weight_K: float
    q_level: float
    penalty_slope: float
    h: float

    def __post_init__(self):
        object.__setattr__(self, "x_star", tuple(float(v) for v in self.x_star))
        n = len(self.x_star)
        if n == 0:
            raise SynthesisError("need at least one cell")
        iw = np.arange(n, 0, -1, dtype=np.float64)
        checks = {
            "0 < sigma <= 1": 0.0 < self.sigma <= 1.0,
            "equilibrium positive": all(v > 0.0 for v in self.x_star),
            "weight_A > 1": self.weight_A > 1.0,
            "weight_K > 0": self.weight_K > 0.0,
            "penalty_slope > 0": self.penalty_slope > 0.0,
            "h > 0": self.h > 0.0,
            "q_level >= weighted equilibrium load": self.q_level
            >= float(iw @ np.asarray(self.x_star)),
        }
        bad = [name for name, ok in checks.items() if not ok]
        if bad:
            raise SynthesisError(f"certificate value invariants violated: {bad}")

    @classmethod
    def from_certificate(cls, cert):
        """Build the value function carried by a synthesized certificate."""
        return cls(
            x_star=cert.x_star,
            sigma=cert.sigma,
            weight_A=cert.weight_A,
            weight_K=cert.weight_K,
            q_level=cert.Q,
            penalty_slope=cert.penalty_slope,
            h=cert.h,
        )

    @property
    def n(self):
        return len(self.x_star)

    @cached_property
    def _x_arr(self):
        return np.ascontiguousarray(self.x_star, dtype=np.float64)

    @cached_property
    def _wpow(self):
        return self.sigma ** np.arange(1, self.n + 1, dtype=np.float64)

    @cached_property
    def _iw(self):
        return np.arange(self.n, 0, -1, dtype=np.float64)

    def xi_batch(self, X):
        """Weighted overshoot above the equilibrium for each row of X."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return _kernels.xi_batch(self._wpow, self._x_arr, X)

    def xi(self, x):
        return float(self.xi_batch(np.asarray(x, dtype=np.float64)[None, :])[0])

    def penalty_batch(self, X):
        """Density level above which the load term activates, per row."""
        xi = self.xi_batch(X)
        return self.q_level - self.penalty_slope * np.minimum(self.h, xi)

    def penalty(self, x):
        return float(self.penalty_batch(np.asarray(x, dtype=np.float64)[None, :])[0])

    def value_batch(self, X):
        """Certificate value for each row of X."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return _kernels.value_batch(
            self._x_arr,
            self._wpow,
            self._iw,
            self.weight_A,
            self.weight_K,
            self.q_level,
            self.penalty_slope,
            self.h,
            X,
        )

    def value(self, x):
        return float(self.value_batch(np.asarray(x, dtype=np.float64)[None, :])[0])


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one swept inequality.

    ``worst_margin`` is the minimum slack of the inequality over the sweep
    (negative means violated); ``witness`` holds the worst violating point
    as ``{"x", "d", "lhs", "rhs"}`` and is None when the check passed.
    """

    name: str
    passed: bool
    samples: int
    violations: int
    worst_margin: float
    witness: dict = None

    def to_dict(self):
        return {
            "name": self.name,
            "passed": self.passed,
            "samples": self.samples,
            "violations": self.violations,
            "worst_margin": self.worst_margin,
            "witness": self.witness,
        }


@dataclass(frozen=True)
class VerificationReport:
    """Bundle of check results from one verification sweep."""

    checks: tuple

    def __post_init__(self):
        object.__setattr__(self, "checks", tuple(self.checks))

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks]}


def sample_states(model, n_samples, rng):
    """Draw states uniformly from the half-open box (0, jam] per cell."""
    return model.jams * (1.0 - rng.uniform(size=(n_samples, model.n)))


def _priority_rounds(n_junctions, d_levels, n_random_d, rng, m):
    """Yield (m, n_junctions) priority matrices: full grid, then random."""
    for combo in itertools.product(d_levels, repeat=n_junctions):
        yield np.broadcast_to(np.asarray(combo, dtype=np.float64), (m, n_junctions))
    for _ in range(n_random_d):
        yield rng.uniform(size=(m, n_junctions))


class _Worst:
    """Track violation count and the worst margin seen across rounds."""

    def __init__(self, name):
        self.name = name
        self.samples = 0
        self.violations = 0
        self.worst_margin = np.inf
        self.witness = None
        self._worst_bad = np.inf

    def update(self, margin, tol, X, D, lhs, rhs):
        self.samples += margin.size
        bad = margin < -tol
        self.violations += int(np.count_nonzero(bad))
        self.worst_margin = min(self.worst_margin, float(margin.min()))
        if bad.any():
            k = int(np.argmin(np.where(bad, margin, np.inf)))
            if margin[k] < self._worst_bad:
                self._worst_bad = float(margin[k])
                self.witness = {
                    "x": [float(v) for v in X[k]],
                    "d": [float(v) for v in D[k]] if D is not None else None,
                    "lhs": float(lhs[k]),
                    "rhs": float(rhs[k]),
                }

    def result(self):
        return CheckResult(
            name=self.name,
            passed=self.violations == 0,
            samples=self.samples,
            violations=self.violations,
            worst_margin=float(self.worst_margin),
            witness=self.witness,
        )


def verify_decrease(
    model,
    controller,
    lyap,
    cert,
    *,
    n_samples=10_000,
    seed=42,
    d_levels=(0.0, 0.5, 1.0),
    n_random_d=5,
    rel_tol=1e-9,
):
    """Sweep the one-step decrease of the certificate value.

    For every sampled state (plus the equilibrium and the all-jam vertex)
    and every priority draw (the full ``d_levels`` grid, then
    ``n_random_d`` uniform rows), checks both inequalities:

    * ``decrease_rate``:   V(x+) <= V(x) - defect * V(x)
    * ``decrease_strict``: V(x+) <= V(x) - (1 - L) * sum_i sigma^i |x_i - x_i*|

    each with relative slack ``rel_tol`` on the right side.  Violations
    are reported as witnesses, not raised.
    """
    rng = np.random.default_rng(seed)
    X = np.vstack([sample_states(model, n_samples, rng), [cert.x_star], [model.jams]])
    m = X.shape[0]

    U = controller.command_batch(X)
    v0 = lyap.value_batch(X)
    base = np.abs(X - lyap._x_arr) @ lyap._wpow
    rate_rhs = v0 - cert.decrease_defect * v0
    strict_rhs = v0 - (1.0 - cert.L) * base

    rate = _Worst("decrease_rate")
    strict = _Worst("decrease_strict")
    for D in _priority_rounds(model.n - 1, d_levels, n_random_d, rng, m):
        X1, _ = model.step_batch(X, U, D)
        v1 = lyap.value_batch(X1)
        for tracker, rhs in ((rate, rate_rhs), (strict, strict_rhs)):
            tol = rel_tol * np.maximum(1.0, np.abs(rhs))
            tracker.update(rhs - v1, tol, X, D, v1, rhs)
    return VerificationReport(checks=(rate.result(), strict.result()))


def verify_sandwich(model, lyap, cert, *, n_samples=10_000, seed=42, rel_tol=1e-9):
    """Sweep the norm bounds K1 ||x - x*|| <= V(x) <= K2 ||x - x*||.

    The norm is Euclidean.  Samples cover the state box plus the
    equilibrium (both sides vanish there) and the all-jam vertex, whose
    margins are reported rather than asserted away.
    """
    rng = np.random.default_rng(seed)
    X = np.vstack([sample_states(model, n_samples, rng), [cert.x_star], [model.jams]])

    v = lyap.value_batch(X)
    dist = np.linalg.norm(X - lyap._x_arr, axis=1)

    lower = _Worst("sandwich_lower")
    tol = rel_tol * np.maximum(1.0, np.abs(v))
    lower.update(v - cert.K1 * dist, tol, X, None, cert.K1 * dist, v)

    upper = _Worst("sandwich_upper")
    rhs = cert.K2 * dist
    tol = rel_tol * np.maximum(1.0, np.abs(rhs))
    upper.update(rhs - v, tol, X, None, v, rhs)
    return VerificationReport(checks=(lower.result(), upper.result()))


def check_excess_contraction(
    model,
    lyap,
    cert,
    *,
    n_samples=2_000,
    seed=42,
    d_levels=(0.0, 0.5, 1.0),
    n_random_d=3,
    rel_tol=1e-9,
):
    """Inside the free-flow box the weighted overshoot contracts.

    For states in (0, mu], inflows in the box [0, u*], and any priority
    draw, checks ``xi(x+) <= L * xi(x)`` with relative slack.
    """
    rng = np.random.default_rng(seed)
    mu = np.asarray(cert.mu, dtype=np.float64)
    u_star = np.asarray(cert.u_star, dtype=np.float64)
    X = np.vstack([mu * (1.0 - rng.uniform(size=(n_samples, model.n))), [mu]])
    U = np.vstack([u_star * rng.uniform(size=(n_samples, model.n)), [u_star]])
    m = X.shape[0]

    xi0 = lyap.xi_batch(X)
    rhs = cert.L * xi0
    tol = rel_tol * np.maximum(1.0, np.abs(rhs))
    tracker = _Worst("excess_contraction")
    for D in _priority_rounds(model.n - 1, d_levels, n_random_d, rng, m):
        X1, _ = model.step_batch(X, U, D)
        xi1 = lyap.xi_batch(X1)
        tracker.update(rhs - xi1, tol, X, D, xi1, rhs)
    return tracker.result()


def check_penalty_monotone(
    model,
    lyap,
    cert,
    *,
    n_samples=2_000,
    seed=42,
    d_levels=(0.0, 0.5, 1.0),
    n_random_d=3,
    rel_tol=1e-9,
):
    """The penalty level never drops while inflows stay in the box [0, u*].

    For states anywhere in the state box and any priority draw, checks
    ``penalty(x+) >= penalty(x)`` with relative slack.
    """
    rng = np.random.default_rng(seed)
    u_star = np.asarray(cert.u_star, dtype=np.float64)
    X = np.vstack([sample_states(model, n_samples, rng), [cert.x_star], [model.jams]])
    U = u_star * rng.uniform(size=(X.shape[0], model.n))
    m = X.shape[0]

    p0 = lyap.penalty_batch(X)
    tol = rel_tol * np.maximum(1.0, np.abs(p0))
    tracker = _Worst("penalty_monotone")
    for D in _priority_rounds(model.n - 1, d_levels, n_random_d, rng, m):
        X1, _ = model.step_batch(X, U, D)
        p1 = lyap.penalty_batch(X1)
        tracker.update(p1 - p0, tol, X, D, p0, p1)
    return tracker.result()
