"""Piecewise-linear demand curves and the constants certified from them.

A demand curve maps the vehicle count z of a cell to the flow the cell
tries to send downstream during one step. The curves used here are
piecewise linear from (0, 0) up to the jam count, rising strictly until a
critical count and non-increasing after it (a drop after the peak models
the capacity-drop phenomenon).
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from functools import cached_property

from .errors import (
    DemandValidationError,
    DomainError,
    InfeasibleFlowError,
    ScenarioError,
)

_TOL = 1e-9

# Round-off guard: the step map can poke at most a few ulp past the jam
# count when the supply slope is exactly 1, and such states must still be
# evaluable. Anything beyond this relative band is a real domain error.
_JAM_SLACK = 1e-12


@dataclass(frozen=True)
class DemandCertificate:
    """Constants extracted from a validated demand curve.

    hold_lipschitz   Lipschitz constant of z -> z - f(z) on the certified
                     range [0, smooth_bound]; equals one minus the smallest
                     slope there and lies in (0, 1).
    flow_lipschitz   Lipschitz constant of f on the same range, capped at 1.
    theta_lower      linear lower bound: f(z) >= theta_lower * z on [0, jam].
    """

    hold_lipschitz: float
    flow_lipschitz: float
    theta_lower: float


@dataclass(frozen=True)
class PiecewiseLinearDemand:
    """Demand curve defined by breakpoints, with its critical count.

    densities/flows list the breakpoints; the first must be (0, 0) and the
    last density is the jam count. `critical` is the count where demand
    peaks and must coincide with a breakpoint. `smooth_bound` is the upper
    end of the range on which slope bounds are certified; it defaults to
    the critical count and may not exceed it.
    """

    densities: tuple[float, ...]
    flows: tuple[float, ...]
    critical: float
    smooth_bound: float

    def __init__(self, breakpoints, critical, smooth_bound=None):
        pts = [(float(z), float(f)) for z, f in breakpoints]
        if len(pts) < 2:
            raise DemandValidationError("a demand curve needs at least two breakpoints")
        object.__setattr__(self, "densities", tuple(z for z, _ in pts))
        object.__setattr__(self, "flows", tuple(f for _, f in pts))
        object.__setattr__(self, "critical", float(critical))
        object.__setattr__(
            self, "smooth_bound", float(critical if smooth_bound is None else smooth_bound)
        )

    @property
    def jam(self) -> float:
        return self.densities[-1]

    @cached_property
    def slopes(self) -> tuple[float, ...]:
        zs, fs = self.densities, self.flows
        return tuple(
            (fs[j + 1] - fs[j]) / (zs[j + 1] - zs[j]) for j in range(len(zs) - 1)
        )

    @property
    def peak_flow(self) -> float:
        """Largest deliverable flow, attained at the critical count."""
        return self(self.critical)

    def __call__(self, z: float) -> float:
        """Evaluate the curve at count z, exact at every breakpoint."""
        z = float(z)
        zs, fs = self.densities, self.flows
        if z < 0.0 or z > zs[-1] * (1.0 + _JAM_SLACK):
            raise DomainError(f"count {z!r} outside the demand domain [0, {zs[-1]!r}]")
        if z >= zs[-1]:
            return fs[-1]
        j = bisect.bisect_right(zs, z) - 1
        return fs[j] + (z - zs[j]) * self.slopes[j]

    def invert_rising(self, flow: float) -> float:
        """Unique count on the rising branch [0, critical] sending `flow`.

        Exact at breakpoints. Raises InfeasibleFlowError when the flow
        exceeds the peak (or is negative).
        """
        flow = float(flow)
        peak = self.peak_flow
        if flow < 0.0 or flow > peak:
            raise InfeasibleFlowError(
                f"flow {flow!r} not deliverable on the rising branch (peak {peak!r})"
            )
        zs, fs = self.densities, self.flows
        j = bisect.bisect_right(fs, flow, hi=bisect.bisect_right(zs, self.critical)) - 1
        j = max(j, 0)
        if fs[j] == flow:
            return zs[j]
        return zs[j] + (flow - fs[j]) / self.slopes[j]

    def validate(self) -> DemandCertificate:
        """Check the structural assumptions and certify the curve constants.

        Raises DemandValidationError naming the violated condition (and the
        offending segment where one applies). Checks are exact up to a
        1e-9 floating-point tolerance.
        """
        zs, fs = self.densities, self.flows
        if zs[0] != 0.0 or fs[0] != 0.0:
            raise DemandValidationError("curve must start at the breakpoint (0, 0)")
        for j in range(len(zs) - 1):
            if zs[j + 1] <= zs[j]:
                raise DemandValidationError(
                    f"breakpoint counts must be strictly increasing at index {j + 1}",
                    segment=(zs[j], zs[j + 1]),
                )
        jam = zs[-1]
        if not 0.0 < self.critical <= jam:
            raise DemandValidationError(
                f"critical count {self.critical!r} must lie in (0, jam={jam!r}]"
            )
        kc = min(range(len(zs)), key=lambda k: abs(zs[k] - self.critical))
        if kc == 0 or abs(zs[kc] - self.critical) > _TOL:
            raise DemandValidationError(
                f"critical count {self.critical!r} must coincide with a breakpoint"
            )
        if not 0.0 < self.smooth_bound <= self.critical + _TOL:
            raise DemandValidationError(
                f"smooth bound {self.smooth_bound!r} must lie in (0, critical]"
            )
        for j in range(1, len(zs)):
            if fs[j] <= 0.0:
                raise DemandValidationError(
                    f"demand must stay positive: f({zs[j]!r}) = {fs[j]!r}",
                    segment=(zs[j - 1], zs[j]),
                )
            if fs[j] >= zs[j]:
                raise DemandValidationError(
                    f"demand must stay below the count: f({zs[j]!r}) = {fs[j]!r}",
                    segment=(zs[j - 1], zs[j]),
                )
        slopes = self.slopes
        for j, m in enumerate(slopes):
            seg = (zs[j], zs[j + 1])
            if zs[j + 1] <= self.critical + _TOL:
                if m <= _TOL:
                    raise DemandValidationError(
                        f"segment {seg}: demand must rise strictly before the "
                        f"critical count (slope {m!r})",
                        segment=seg,
                    )
            elif m > _TOL:
                raise DemandValidationError(
                    f"segment {seg}: demand must not rise after the critical "
                    f"count (slope {m!r})",
                    segment=seg,
                )
        certified = [
            (j, m) for j, m in enumerate(slopes) if zs[j] < self.smooth_bound
        ]
        for j, m in certified:
            if m > 1.0 + _TOL:
                raise DemandValidationError(
                    f"segment {(zs[j], zs[j + 1])}: slope {m!r} exceeds 1 on the "
                    f"certified range",
                    segment=(zs[j], zs[j + 1]),
                )
        m_min = min(m for _, m in certified)
        m_max = max(m for _, m in certified)
        hold = 1.0 - m_min
        if not 0.0 < hold < 1.0:
            raise DemandValidationError(
                f"smallest certified slope {m_min!r} leaves no contraction margin"
            )
        theta = min(fs[j] / zs[j] for j in range(1, len(zs)))
        return DemandCertificate(
            hold_lipschitz=hold,
            flow_lipschitz=min(m_max, 1.0),
            theta_lower=theta,
        )

    def to_dict(self) -> dict:
        return {
            "breakpoints": [[z, f] for z, f in zip(self.densities, self.flows)],
            "critical": self.critical,
            "smooth_bound": self.smooth_bound,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PiecewiseLinearDemand":
        unknown = set(doc) - {"breakpoints", "critical", "smooth_bound"}
        if unknown:
            raise ScenarioError(f"unknown demand keys: {sorted(unknown)}")
        try:
            breakpoints = doc["breakpoints"]
            critical = doc["critical"]
        except KeyError as exc:
            raise ScenarioError(f"demand block missing key {exc}") from None
        return cls(breakpoints, critical, doc.get("smooth_bound"))
