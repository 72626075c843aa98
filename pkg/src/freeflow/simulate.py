"""Closed-loop simulation harness: disturbances, measurement noise, runs.

Controllers are duck typed: ``init_state(x0) -> state``, ``command(x_meas,
state, t) -> (inflows, state)``, ``observe(state, flows) -> state``.  Each
step measures the true state, commands from the measurement, then advances
the true state, so feedback only ever sees what the sensors report.
Disturbance policies and measurement errors carry their own seeds, which
makes identical configurations reproduce bit-identical runs.
"""

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from . import _kernels

__all__ = [
    "ConstantDisturbance",
    "UniformDisturbance",
    "AdversarialDisturbance",
    "MeasurementError",
    "RunRecord",
    "simulate",
    "vef",
    "settling_time",
    "write_csv",
]


@dataclass(frozen=True)
class ConstantDisturbance:
    """Every junction uses the same fixed merge priority each step."""

    value: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError("merge priority must lie in [0, 1]")

    def begin(self, model):
        d = np.full(model.n - 1, self.value)

        def draw(t, x, u):
            return d

        return draw


@dataclass(frozen=True)
class UniformDisturbance:
    """Independent uniform merge priorities, one draw per junction and step."""

    seed: int = 0

    def begin(self, model):
        rng = np.random.default_rng(self.seed)
        m = model.n - 1

        def draw(t, x, u):
            return rng.uniform(size=m)

        return draw


class AdversarialDisturbance:
    """Per-step worst case: the grid priority that maximizes V(x+).

    At each step every combination from ``levels`` is applied to the
    pending (state, command) pair and the one yielding the largest
    certificate value after the step is chosen (first maximizer on ties).
    """

    def __init__(self, lyap, levels=(0.0, 0.5, 1.0)):
        if len(levels) == 0:
            raise ValueError("need at least one priority level")
        if not all(0.0 <= lv <= 1.0 for lv in levels):
            raise ValueError("merge priority levels must lie in [0, 1]")
        self.lyap = lyap
        self.levels = tuple(float(lv) for lv in levels)

    def begin(self, model):
        grid = np.array(
            list(itertools.product(self.levels, repeat=model.n - 1)), dtype=np.float64
        )
        g = grid.shape[0]

        def draw(t, x, u):
            X = np.tile(x, (g, 1))
            U = np.tile(u, (g, 1))
            X1, _ = model.step_batch(X, U, grid)
            return grid[int(np.argmax(self.lyap.value_batch(X1)))]

        return draw


@dataclass(frozen=True)
class MeasurementError:
    """Additive sensor error of fixed magnitude, clamped to the state box.

    The measured state is ``clamp(x + magnitude * e(t), [0, jam])`` where
    the direction ``e(t)`` is either the synchronized sinusoid
    ``cos(frequency * t) / sqrt(n) * (1, ..., 1)`` or a fresh uniformly
    random unit vector per step.  Zero magnitude measures exactly.
    """

    magnitude: float = 0.0
    direction: str = "cosine"
    frequency: float = np.pi
    seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.magnitude) and self.magnitude >= 0.0):
            raise ValueError("error magnitude must be finite and nonnegative")
        if self.direction not in ("cosine", "sphere"):
            raise ValueError("direction must be 'cosine' or 'sphere'")
        if not np.isfinite(self.frequency):
            raise ValueError("frequency must be finite")

    def begin(self, model):
        if self.magnitude == 0.0:
            return lambda x, t: x
        jams = model.jams
        n = model.n
        if self.direction == "cosine":
            scale = self.magnitude / np.sqrt(n)

            def measure(x, t):
                return np.clip(x + scale * np.cos(self.frequency * t), 0.0, jams)

        else:
            rng = np.random.default_rng(self.seed)

            def measure(x, t):
                v = rng.normal(size=n)
                e = v / np.linalg.norm(v)
                return np.clip(x + self.magnitude * e, 0.0, jams)

        return measure


@dataclass(frozen=True)
class RunRecord:
    """Everything one closed-loop run produced.

    State-indexed series have ``horizon + 1`` rows (t = 0 .. T): true
    states, measured states, commands, and priority draws (the draw at the
    final row is recorded but never applied).  Flow series have
    ``horizon`` rows, one per executed step.  ``discharge`` is the last
    cell's demand along the run, ``vef_cum`` its running sum, so
    ``vef_cum[T]`` is the value of extracted flow over the horizon.
    ``dist_to_eq`` and ``v_values`` are None unless the run was given an
    equilibrium or a certificate value function.
    """

    x: np.ndarray
    x_meas: np.ndarray
    u: np.ndarray
    d: np.ndarray
    inflow: np.ndarray
    outflow: np.ndarray
    discharge: np.ndarray
    vef_cum: np.ndarray
    dist_to_eq: np.ndarray = None
    v_values: np.ndarray = None

    @property
    def horizon(self):
        return self.x.shape[0] - 1

    @property
    def n(self):
        return self.x.shape[1]


def simulate(
    model,
    controller,
    x0,
    horizon,
    *,
    disturbance=None,
    measurement=None,
    x_star=None,
    lyap=None,
):
    """Run the closed loop for ``horizon`` steps and record everything.

    Each step measures the true state, asks the controller for inflows
    given the measurement, draws the merge priorities, and advances the
    true state.  The final state is measured and commanded too, so the
    record always holds ``horizon + 1`` aligned rows.
    """
    x = np.asarray(x0, dtype=np.float64)
    if x.shape != (model.n,):
        raise ValueError(f"initial state must have shape ({model.n},)")
    if not np.all(np.isfinite(x)) or np.any(x < 0.0) or np.any(x > model.jams):
        raise ValueError("initial state must lie in the state box [0, jam]")
    horizon = int(horizon)
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    if disturbance is None:
        disturbance = ConstantDisturbance(0.5)
    draw = disturbance.begin(model)
    measure = (measurement or MeasurementError()).begin(model)
    if x_star is None and lyap is not None:
        x_star = np.asarray(lyap.x_star)

    n = model.n
    X = np.empty((horizon + 1, n))
    XM = np.empty((horizon + 1, n))
    U = np.empty((horizon + 1, n))
    D = np.empty((horizon + 1, n - 1))
    FIN = np.empty((horizon, n))
    FOUT = np.empty((horizon, n))

    state = None
    for t in range(horizon + 1):
        xm = measure(x, t)
        if t == 0:
            state = controller.init_state(xm)
        u, state = controller.command(xm, state, t)
        u = np.asarray(u, dtype=np.float64)
        d = np.asarray(draw(t, x, u), dtype=np.float64)
        X[t], XM[t], U[t], D[t] = x, xm, u, d
        if t < horizon:
            x, flows = model.step(x, u, d)
            state = controller.observe(state, flows)
            FIN[t], FOUT[t] = flows.inflow, flows.outflow

    discharge = _kernels.demand_batch(model.arrays, X)[:, -1]
    return RunRecord(
        x=X,
        x_meas=XM,
        u=U,
        d=D,
        inflow=FIN,
        outflow=FOUT,
        discharge=discharge,
        vef_cum=np.cumsum(discharge),
        dist_to_eq=None
        if x_star is None
        else np.linalg.norm(X - np.asarray(x_star), axis=1),
        v_values=None if lyap is None else lyap.value_batch(X),
    )


def vef(record, horizon=None):
    """Value of extracted flow: cumulative last-cell demand through ``horizon``.

    Defaults to the full recorded horizon; asking past the record raises.
    """
    if horizon is None:
        horizon = record.horizon
    horizon = int(horizon)
    if not 0 <= horizon <= record.horizon:
        raise ValueError(
            f"horizon {horizon} outside the recorded range [0, {record.horizon}]"
        )
    return float(record.vef_cum[horizon])


def settling_time(record, target, tol=1e-6, hold=10):
    """First step from which the state stays within ``tol`` of ``target``.

    Uses the max norm and requires the next ``hold`` recorded states (or
    all remaining ones) to stay inside; returns None if that never holds.
    """
    close = np.max(np.abs(record.x - np.asarray(target)), axis=1) < tol
    count = 0
    for t, ok in enumerate(close):
        count = count + 1 if ok else 0
        if count >= hold:
            return t - hold + 1
    return None


def write_csv(record, path):
    """Write the run as CSV: one row per step, 10 significant digits.

    Columns: t, x_1..x_n, xtilde_1..xtilde_n, u_1..u_n, d_2..d_n,
    outflow_n, vef_cum, dist_to_eq, V.  The last two are ``nan`` when the
    run was not given an equilibrium or a value function.
    """
    n = record.n
    header = (
        ["t"]
        + [f"x_{i}" for i in range(1, n + 1)]
        + [f"xtilde_{i}" for i in range(1, n + 1)]
        + [f"u_{i}" for i in range(1, n + 1)]
        + [f"d_{i}" for i in range(2, n + 1)]
        + ["outflow_n", "vef_cum", "dist_to_eq", "V"]
    )
    dist = record.dist_to_eq
    vv = record.v_values
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(record.horizon + 1):
            row = (
                [t]
                + [f"{v:.10g}" for v in record.x[t]]
                + [f"{v:.10g}" for v in record.x_meas[t]]
                + [f"{v:.10g}" for v in record.u[t]]
                + [f"{v:.10g}" for v in record.d[t]]
                + [
                    f"{record.discharge[t]:.10g}",
                    f"{record.vef_cum[t]:.10g}",
                    f"{float('nan') if dist is None else dist[t]:.10g}",
                    f"{float('nan') if vv is None else vv[t]:.10g}",
                ]
            )
            writer.writerow(row)
