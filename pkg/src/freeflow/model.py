"""Discrete-time freeway corridor with metered ramps and uncertain merges.

A corridor is a chain of cells.  Each cell holds a vehicle count, sheds
flow through a concave demand curve, accepts flow up to a linear supply,
and passes a fixed fraction of its outflow off the mainline.  Ramp
inflows are the controls.  How each merge junction arbitrates between
the upstream mainline and its ramp when supply is short is not modelled;
it is an exogenous priority in ``[0, 1]`` chosen fresh every step (0:
the ramp is served first, 1: the mainline is served first).
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from freeflow import _kernels
from freeflow.demand import PiecewiseLinearDemand
from freeflow.errors import (
    InfeasibleFlowError,
    ModelValidationError,
    NoEquilibriumError,
    ScenarioError,
)

_JAM_SLACK = 1e-12
_MARGIN_SLACK = 1e-9


@dataclass(frozen=True)
class CellParams:
    """Static description of one cell.

    ``jam`` is the vehicle capacity, ``supply_gain`` the slope of the
    receiving constraint ``supply_gain * (jam - x)``, ``inflow_cap`` the
    hard bound on accepted inflow, and ``exit_split`` the fraction of
    the cell's outflow that leaves the mainline.
    """

    jam: float
    supply_gain: float
    inflow_cap: float
    exit_split: float
    demand: PiecewiseLinearDemand

    def validate(self):
        """Check the scalar parameters and certify the demand curve."""
        if not (np.isfinite(self.jam) and self.jam > 0):
            raise ModelValidationError(f"jam capacity must be positive, got {self.jam}")
        if not (np.isfinite(self.supply_gain) and 0 < self.supply_gain <= 1):
            raise ModelValidationError(
                f"supply gain must lie in (0, 1], got {self.supply_gain}"
            )
        if not (np.isfinite(self.inflow_cap) and self.inflow_cap > 0):
            raise ModelValidationError(
                f"inflow cap must be positive, got {self.inflow_cap}"
            )
        if not (np.isfinite(self.exit_split) and 0 <= self.exit_split <= 1):
            raise ModelValidationError(
                f"exit split must lie in [0, 1], got {self.exit_split}"
            )
        if abs(self.demand.jam - self.jam) > 1e-9 * self.jam:
            raise ModelValidationError(
                f"demand curve ends at {self.demand.jam}, cell jams at {self.jam}"
            )
        return self.demand.validate()

    def to_dict(self):
        return {
            "jam": self.jam,
            "supply_gain": self.supply_gain,
            "inflow_cap": self.inflow_cap,
            "exit_split": self.exit_split,
            "demand": self.demand.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc):
        known = {"jam", "supply_gain", "inflow_cap", "exit_split", "demand"}
        extra = set(doc) - known
        if extra:
            raise ScenarioError(f"unknown cell keys: {sorted(extra)}")
        missing = known - set(doc)
        if missing:
            raise ScenarioError(f"missing cell keys: {sorted(missing)}")
        return cls(
            jam=float(doc["jam"]),
            supply_gain=float(doc["supply_gain"]),
            inflow_cap=float(doc["inflow_cap"]),
            exit_split=float(doc["exit_split"]),
            demand=PiecewiseLinearDemand.from_dict(doc["demand"]),
        )


@dataclass(frozen=True)
class StepFlows:
    """Flow breakdown of one step (arrays are per cell, batch or single).

    ``split`` has one entry per interface 2..n: the fraction of the
    upstream mainline demand admitted there.  ``accept`` is the fraction
    of each commanded ramp inflow actually admitted.
    """

    inflow: np.ndarray
    outflow: np.ndarray
    mainstream: np.ndarray
    offramp: np.ndarray
    split: np.ndarray
    accept: np.ndarray


@dataclass(frozen=True)
class FreewayModel:
    """A validated chain of cells with step dynamics and equilibria."""

    cells: tuple

    def __post_init__(self):
        cells = tuple(self.cells)
        object.__setattr__(self, "cells", cells)
        if len(cells) < 3:
            raise ModelValidationError(
                f"a corridor needs at least 3 cells, got {len(cells)}"
            )
        certs = []
        for i, cell in enumerate(cells, start=1):
            try:
                certs.append(cell.validate())
            except Exception as exc:
                raise ModelValidationError(f"cell {i}: {exc}") from exc
        for i, cell in enumerate(cells[:-1], start=1):
            if cell.exit_split >= 1:
                raise ModelValidationError(
                    f"cell {i}: only the last cell may have exit split 1"
                )
        if cells[-1].exit_split != 1.0:
            raise ModelValidationError(
                "the last cell must send its whole outflow off the mainline"
            )
        object.__setattr__(self, "certificates", tuple(certs))

    @property
    def n(self):
        return len(self.cells)

    @cached_property
    def jams(self):
        return np.array([cell.jam for cell in self.cells])

    @cached_property
    def supply_gains(self):
        return np.array([cell.supply_gain for cell in self.cells])

    @cached_property
    def inflow_caps(self):
        return np.array([cell.inflow_cap for cell in self.cells])

    @cached_property
    def exit_splits(self):
        return np.array([cell.exit_split for cell in self.cells])

    @cached_property
    def critical_densities(self):
        return np.array([cell.demand.critical for cell in self.cells])

    @property
    def demands(self):
        return tuple(cell.demand for cell in self.cells)

    @cached_property
    def arrays(self):
        tables = [
            (cell.demand.densities, cell.demand.flows, cell.demand.slopes)
            for cell in self.cells
        ]
        return _kernels.ModelArrays(
            self.jams, self.supply_gains, self.inflow_caps, self.exit_splits, tables
        )

    # -- dynamics ----------------------------------------------------

    def supply(self, x):
        """Receiving capacity ``min(inflow_cap, supply_gain * (jam - x))``."""
        x = np.asarray(x, dtype=np.float64)
        return np.minimum(self.inflow_caps, self.supply_gains * (self.jams - x))

    def demand_values(self, x):
        """Demand curve of every cell evaluated at its own count."""
        x = self._check_states(np.asarray(x, dtype=np.float64))
        return _kernels.demand_batch(self.arrays, x[None, :])[0]

    def step(self, x, u, d=0.5):
        """One step from a single state; returns ``(next_state, StepFlows)``."""
        x = self._check_states(np.asarray(x, dtype=np.float64))
        X1, flows = self.step_batch(x[None, :], np.asarray(u)[None, :], d)
        squeezed = StepFlows(
            inflow=flows.inflow[0],
            outflow=flows.outflow[0],
            mainstream=flows.mainstream[0],
            offramp=flows.offramp[0],
            split=flows.split[0],
            accept=flows.accept[0],
        )
        return X1[0], squeezed

    def step_batch(self, X, U, D=0.5):
        """One step for a batch of rows; priorities broadcast if scalar."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n:
            raise ModelValidationError(
                f"state batch must have shape (m, {self.n}), got {X.shape}"
            )
        self._check_states(X)
        m = X.shape[0]
        U = self._check_controls(U, m)
        D = self._check_priorities(D, m)
        X1, FIN, FOUT, S, W = _kernels.step_batch(self.arrays, X, U, D)
        flows = StepFlows(
            inflow=FIN,
            outflow=FOUT,
            mainstream=(1.0 - self.exit_splits) * FOUT,
            offramp=self.exit_splits * FOUT,
            split=S,
            accept=W,
        )
        return X1, flows

    def split_ratios(self, x, u, d=0.5):
        """Interface pass-through fractions for one state, control, priority."""
        return self.step(x, u, d)[1].split

    # -- equilibria --------------------------------------------------

    def equilibrium_from_inflows(self, u_star):
        """Free-flow equilibrium pinned by constant ramp inflows.

        Returns ``(x_star, throughput)`` where ``throughput[i]`` is the
        sustained flow out of cell ``i+1``.  Raises
        :class:`NoEquilibriumError` when some cell cannot carry its flow
        strictly inside the certified rising range with strict supply
        and cap margins.
        """
        u = np.asarray(u_star, dtype=np.float64)
        if u.shape != (self.n,):
            raise ModelValidationError(
                f"need one inflow per cell, got shape {u.shape}"
            )
        if np.any(~np.isfinite(u)) or np.any(u < 0):
            raise ModelValidationError("equilibrium inflows must be finite and >= 0")
        p = self.exit_splits
        phi = np.empty(self.n)
        phi[0] = u[0]
        for i in range(1, self.n):
            phi[i] = u[i] + (1.0 - p[i - 1]) * phi[i - 1]
        x_star = np.empty(self.n)
        for i, cell in enumerate(self.cells):
            if phi[i] <= 0:
                raise NoEquilibriumError(
                    f"cell {i + 1} carries no flow; its count cannot stay positive",
                    cell=i + 1,
                )
            try:
                x_star[i] = cell.demand.invert_rising(phi[i])
            except InfeasibleFlowError as exc:
                raise NoEquilibriumError(
                    f"cell {i + 1} cannot carry a sustained flow of {phi[i]}: {exc}",
                    cell=i + 1,
                ) from exc
            bound = cell.demand.smooth_bound
            if x_star[i] >= bound * (1.0 - _MARGIN_SLACK):
                raise NoEquilibriumError(
                    f"cell {i + 1} equilibrium count {x_star[i]} has no margin "
                    f"below the certified range bound {bound}",
                    cell=i + 1,
                )
            room = min(cell.inflow_cap, cell.supply_gain * (cell.jam - x_star[i]))
            if phi[i] >= room * (1.0 - _MARGIN_SLACK):
                raise NoEquilibriumError(
                    f"cell {i + 1} sustained flow {phi[i]} does not clear its "
                    f"receiving capacity {room} strictly",
                    cell=i + 1,
                )
        return x_star, phi

    # -- serialization -----------------------------------------------

    def to_dict(self):
        return {"cells": [cell.to_dict() for cell in self.cells]}

    @classmethod
    def from_dict(cls, doc):
        extra = set(doc) - {"cells"}
        if extra:
            raise ScenarioError(f"unknown model keys: {sorted(extra)}")
        if "cells" not in doc:
            raise ScenarioError("model document needs a 'cells' list")
        return cls(tuple(CellParams.from_dict(c) for c in doc["cells"]))

    # -- validation helpers ------------------------------------------

    def _check_states(self, X):
        if X.ndim == 1 and X.shape != (self.n,):
            raise ModelValidationError(
                f"state must have {self.n} entries, got shape {X.shape}"
            )
        lid = self.jams * (1.0 + _JAM_SLACK)
        bad = ~np.isfinite(X) | (X <= 0.0) | (X > lid)
        if np.any(bad):
            idx = np.argwhere(bad)[0]
            i = int(idx[-1])
            raise ModelValidationError(
                f"cell {i + 1} count {X[tuple(idx)]} is outside (0, {self.jams[i]}]"
            )
        return X

    def _check_controls(self, U, m):
        U = np.ascontiguousarray(U, dtype=np.float64)
        if U.shape != (m, self.n):
            raise ModelValidationError(
                f"control batch must have shape ({m}, {self.n}), got {U.shape}"
            )
        bad = ~np.isfinite(U) | (U < 0.0)
        if np.any(bad):
            i = int(np.argwhere(bad)[0][-1])
            raise ModelValidationError(f"cell {i + 1} commanded inflow is negative")
        return U

    def _check_priorities(self, D, m):
        if np.ndim(D) == 0:
            D = np.full((m, self.n - 1), float(D))
        else:
            D = np.ascontiguousarray(D, dtype=np.float64)
            if D.ndim == 1:
                D = np.broadcast_to(D, (m, self.n - 1)).copy()
        if D.shape != (m, self.n - 1):
            raise ModelValidationError(
                f"priority batch must have shape ({m}, {self.n - 1}), got {D.shape}"
            )
        if np.any(~np.isfinite(D) | (D < 0.0) | (D > 1.0)):
            raise ModelValidationError("merge priorities must lie in [0, 1]")
        return D
