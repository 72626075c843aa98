"""Inflow controllers: the certified throttling law and a PI baseline.

Every controller follows the same duck-typed harness contract:

* ``init_state(x0)`` returns the controller's internal state (``None``
  for stateless laws).
* ``command(x_meas, state, t)`` returns ``(inflow vector, new state)``.
* ``observe(state, flows)`` shows the controller the realized step flows
  before the next command; stateless laws return the state unchanged.
"""

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from freeflow import _kernels


@dataclass(frozen=True)
class StabilizingFeedback:
    """Saturated proportional throttling of the controlled inflows.

    The congestion excess ``xi(x) = sum_i sigma^i max(0, x_i - x_i*)``
    cuts each controlled inflow linearly below its equilibrium value,
    never under its floor: ``u_i = max(u_i* - gamma_i xi(x), b_i)`` for
    ``i`` in ``R`` and ``u_i = u_i*`` elsewhere.  The law is memoryless;
    its internal state is ``None``.
    """

    x_star: tuple
    u_star: tuple
    sigma: float
    R: tuple
    gamma: tuple
    b: tuple

    def __post_init__(self):
        object.__setattr__(self, "x_star", tuple(float(v) for v in self.x_star))
        object.__setattr__(self, "u_star", tuple(float(v) for v in self.u_star))
        object.__setattr__(self, "R", tuple(int(i) for i in self.R))
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        object.__setattr__(self, "b", tuple(float(v) for v in self.b))
        n = len(self.x_star)
        if len(self.u_star) != n:
            raise ValueError("x_star and u_star must have one entry per cell")
        if not all(v > 0 for v in self.x_star):
            raise ValueError("equilibrium counts must be positive")
        if not all(v >= 0 for v in self.u_star):
            raise ValueError("equilibrium inflows must be nonnegative")
        if not 0 < self.sigma <= 1:
            raise ValueError(f"weight must lie in (0, 1], got {self.sigma}")
        if not self.R:
            raise ValueError("at least one inflow must be controlled")
        if list(self.R) != sorted(set(self.R)) or not all(
            1 <= i <= n for i in self.R
        ):
            raise ValueError(f"controlled indices must be sorted, unique, in 1..{n}")
        if len(self.gamma) != len(self.R) or len(self.b) != len(self.R):
            raise ValueError("gamma and b must align with the controlled indices")
        if not all(g > 0 for g in self.gamma):
            raise ValueError("gains must be positive")
        for i, bi in zip(self.R, self.b):
            if not 0 < bi < self.u_star[i - 1]:
                raise ValueError(
                    f"floor for inflow {i} must lie in (0, {self.u_star[i - 1]}), "
                    f"got {bi}"
                )

    @classmethod
    def from_certificate(cls, cert):
        return cls(
            x_star=cert.x_star,
            u_star=cert.u_star,
            sigma=cert.sigma,
            R=cert.R,
            gamma=cert.gamma,
            b=cert.b,
        )

    @property
    def n(self):
        return len(self.x_star)

    @cached_property
    def _wpow(self):
        return self.sigma ** np.arange(1, self.n + 1)

    @cached_property
    def _x_arr(self):
        return np.ascontiguousarray(self.x_star, dtype=np.float64)

    @cached_property
    def _u_arr(self):
        return np.asarray(self.u_star, dtype=np.float64)

    def xi_batch(self, X):
        """Congestion excess for each row of X."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _kernels.xi_batch(self._wpow, self._x_arr, X)

    def xi(self, x):
        return float(self.xi_batch(np.asarray(x, dtype=np.float64)[None, :])[0])

    def command_batch(self, X):
        """Inflow commands for each row of X, shape (m, n)."""
        excess = self.xi_batch(X)
        U = np.tile(self._u_arr, (excess.shape[0], 1))
        for idx, i in enumerate(self.R):
            U[:, i - 1] = np.maximum(
                self.u_star[i - 1] - self.gamma[idx] * excess, self.b[idx]
            )
        return U

    def command(self, x_meas, state=None, t=0):
        u = self.command_batch(np.asarray(x_meas, dtype=np.float64)[None, :])[0]
        return u, state

    def init_state(self, x0):
        return None

    def observe(self, state, flows):
        return state


@dataclass(frozen=True)
class RlbPiParams:
    """Gains and bounds for the PI regulator bank.

    ``setpoints`` defaults to the model's critical densities when the
    controller is built; ``track_realized_inflow`` switches the
    anti-windup bound from the previously commanded inflow to the inflow
    the freeway actually accepted.
    """

    proportional_gain: float = 5.0 / 18.0
    integral_gain: float = 1.0 / 90.0
    headroom: float = 4.0
    smoothing: float = 0.5
    command_min: float = 0.2
    command_max: float = 25.0
    initial_command: float = 20.0
    setpoints: tuple = None
    track_realized_inflow: bool = False

    def __post_init__(self):
        if self.setpoints is not None:
            object.__setattr__(
                self, "setpoints", tuple(float(v) for v in self.setpoints)
            )
        if self.proportional_gain <= 0 or self.integral_gain <= 0:
            raise ValueError("regulator gains must be positive")
        if self.headroom <= 0:
            raise ValueError("headroom must be positive")
        if not 0 < self.smoothing < 1:
            raise ValueError(f"smoothing must lie in (0, 1), got {self.smoothing}")
        if not 0 < self.command_min < self.command_max:
            raise ValueError("need 0 < command_min < command_max")
        if self.initial_command <= 0:
            raise ValueError("initial command must be positive")


@dataclass(frozen=True)
class RlbPiState:
    """Regulator bank memory carried between steps."""

    v: tuple
    v_sm: tuple
    u_prev: float
    x_prev: tuple


class RlbPiController:
    """Bank of per-cell PI regulators with conservative-minimum selection.

    Each cell runs a bounded PI regulator toward its density setpoint;
    the regulator whose exponentially smoothed value is currently lowest
    is selected (smallest index on ties) and its unsmoothed value becomes
    the first-cell inflow command.  Inflows beyond the first pass through
    as configured constants.
    """

    def __init__(self, model, params=None, other_inflows=None):
        self.model = model
        self.params = params if params is not None else RlbPiParams()
        setpoints = self.params.setpoints
        if setpoints is None:
            setpoints = model.critical_densities
        self.setpoints = np.asarray(setpoints, dtype=np.float64)
        if self.setpoints.shape != (model.n,):
            raise ValueError(
                f"need one setpoint per cell, got {len(self.setpoints)} "
                f"for {model.n} cells"
            )
        if other_inflows is None:
            other_inflows = np.zeros(model.n - 1)
        self.other_inflows = np.asarray(other_inflows, dtype=np.float64)
        if self.other_inflows.shape != (model.n - 1,):
            raise ValueError(
                f"need {model.n - 1} pass-through inflows, "
                f"got shape {self.other_inflows.shape}"
            )
        if np.any(self.other_inflows < 0):
            raise ValueError("pass-through inflows must be nonnegative")

    def init_state(self, x0):
        p = self.params
        n = self.model.n
        start = (float(p.initial_command),) * n
        x0 = np.asarray(x0, dtype=np.float64)
        return RlbPiState(
            v=start,
            v_sm=start,
            u_prev=float(p.initial_command),
            x_prev=tuple(float(v) for v in x0),
        )

    def command(self, x_meas, state, t=0):
        if state is None:
            raise ValueError("regulator state missing; call init_state first")
        p = self.params
        x = np.asarray(x_meas, dtype=np.float64)
        x_prev = np.asarray(state.x_prev)
        supply = min(
            self.model.inflow_caps[0],
            self.model.supply_gains[0] * (self.model.jams[0] - x_prev[0]),
            state.u_prev,
        )
        ceiling = supply + p.headroom
        raw = (
            np.asarray(state.v)
            - p.proportional_gain * (x - x_prev)
            + p.integral_gain * (self.setpoints - x)
        )
        v = np.minimum(
            p.command_max, np.minimum(ceiling, np.maximum(p.command_min, raw))
        )
        v_sm = p.smoothing * v + (1.0 - p.smoothing) * np.asarray(state.v_sm)
        selected = int(np.argmin(v_sm))
        u1 = float(v[selected])
        u = np.concatenate(([u1], self.other_inflows))
        new_state = RlbPiState(
            v=tuple(v), v_sm=tuple(v_sm), u_prev=u1, x_prev=tuple(x)
        )
        return u, new_state

    def observe(self, state, flows):
        if not self.params.track_realized_inflow:
            return state
        return replace(state, u_prev=float(np.asarray(flows.inflow)[0]))


@dataclass(frozen=True)
class ConstantInflow:
    """Fixed inflow vector, useful for open-loop runs."""

    inflows: tuple

    def __post_init__(self):
        object.__setattr__(self, "inflows", tuple(float(v) for v in self.inflows))
        if not all(np.isfinite(v) and v >= 0 for v in self.inflows):
            raise ValueError("inflows must be finite and nonnegative")

    def command_batch(self, X):
        """The same inflow vector for each row of X, shape (m, n)."""
        m = np.atleast_2d(np.asarray(X, dtype=np.float64)).shape[0]
        return np.tile(np.asarray(self.inflows, dtype=np.float64), (m, 1))

    def command(self, x_meas, state=None, t=0):
        return np.asarray(self.inflows, dtype=np.float64), state

    def init_state(self, x0):
        return None

    def observe(self, state, flows):
        return state
