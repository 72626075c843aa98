"""Constant pipeline behind the exponentially stabilizing ramp metering law.

Everything here is derived from the model's demand certificates and the
target equilibrium: a drainage constant that lower-bounds the weighted
discharge of congested states, per-cell free-flow box bounds, the set of
ramps that must be actuated with their floors, and finally the gains and
certificate weights packaged as a :class:`StabilizerCertificate`.
"""

import math
from dataclasses import dataclass, fields

import numpy as np

from freeflow.errors import (
    InfeasibleControlSetError,
    NoEquilibriumError,
    ScenarioError,
    SynthesisError,
)

_MARGIN_SLACK = 1e-9


@dataclass(frozen=True)
class StabilizerCertificate:
    """Closed-form constants certifying exponential decay of the closed loop.

    ``sigma`` is the geometric cell weight, ``L`` the contraction rate of
    the free-flow cascade, ``C`` the drainage constant, ``mu`` the
    free-flow box bounds, ``R``/``b``/``gamma`` the controlled inflow
    indices (1-based) with their floors and gains, ``penalty_slope`` the
    slope of the over-capacity penalty, and ``weight_A``/``weight_K`` the
    certificate weights.  ``K1 |x - x*| <= V(x) <= K2 |x - x*|`` is the
    sandwich, ``L_tilde = 1 - decrease_defect`` the per-step factor.
    ``decrease_defect`` is carried separately because ``(1-L) sigma^n / K2``
    can be far below the resolution of a double next to 1.
    """

    sigma: float
    L: float
    C: float
    beta: tuple
    omega: tuple
    mu: tuple
    R: tuple
    b: tuple
    epsilon: float
    h: float
    Q: float
    penalty_slope: float
    tau_star: float
    tau: float
    gamma: tuple
    weight_A: float
    weight_K: float
    K1: float
    K2: float
    L_tilde: float
    decrease_defect: float
    x_star: tuple
    u_star: tuple

    def __post_init__(self):
        if not all(1 <= i <= len(self.u_star) for i in self.R):
            raise SynthesisError(
                f"controlled indices {self.R} out of range for {len(self.u_star)} cells"
            )
        checks = [
            0 < self.sigma <= 1,
            0 < self.L < 1,
            self.C > 0,
            0 < self.epsilon < 1,
            self.h > 0,
            self.Q > 0,
            self.penalty_slope > 0,
            0 < self.tau < self.tau_star <= self.h,
            self.weight_A > 1,
            self.weight_K > 0,
            0 < self.K1 <= self.K2,
            self.decrease_defect > 0,
            0 < self.L_tilde <= 1,
            len(self.R) == len(self.b) == len(self.gamma) > 0,
            all(0 < bi < ui for bi, ui in zip(self.b, self._u_of_R())),
        ]
        if not all(checks):
            bad = [i for i, ok in enumerate(checks) if not ok]
            raise SynthesisError(f"certificate invariants violated: checks {bad}")

    def _u_of_R(self):
        return [self.u_star[i - 1] for i in self.R]

    @property
    def n(self):
        return len(self.x_star)

    def to_dict(self):
        """JSON document with conventional one-letter math keys."""
        return {
            "sigma": self.sigma,
            "L": self.L,
            "C": self.C,
            "beta": list(self.beta),
            "omega": list(self.omega),
            "mu": list(self.mu),
            "R": list(self.R),
            "b": list(self.b),
            "epsilon": self.epsilon,
            "h": self.h,
            "Q": self.Q,
            "theta": self.penalty_slope,
            "tau_star": self.tau_star,
            "tau": self.tau,
            "gamma": list(self.gamma),
            "A": self.weight_A,
            "K": self.weight_K,
            "K1": self.K1,
            "K2": self.K2,
            "L_tilde": self.L_tilde,
            "decrease_defect": self.decrease_defect,
            "x_star": list(self.x_star),
            "u_star": list(self.u_star),
        }

    @classmethod
    def from_dict(cls, doc):
        rename = {"theta": "penalty_slope", "A": "weight_A", "K": "weight_K"}
        known = set(f.name for f in fields(cls)) - set(rename.values())
        known |= set(rename)
        extra = set(doc) - known
        if extra:
            raise ScenarioError(f"unknown certificate keys: {sorted(extra)}")
        missing = known - set(doc)
        if missing:
            raise ScenarioError(f"missing certificate keys: {sorted(missing)}")
        kwargs = {}
        for key, value in doc.items():
            name = rename.get(key, key)
            if name in ("beta", "omega", "mu", "b", "gamma", "x_star", "u_star"):
                kwargs[name] = tuple(float(v) for v in value)
            elif name == "R":
                kwargs[name] = tuple(int(v) for v in value)
            else:
                kwargs[name] = float(value)
        return cls(**kwargs)


def estimate_C(model, r):
    """Drainage constant from the backward min-recursion.

    ``r`` bounds the ramp inflows of cells 2..n.  The returned constant
    guarantees that the weighted discharge of any state is at least C
    times the position-weighted total count, no matter the priorities,
    whenever each ramp inflow i >= 2 stays at or below ``r[i-2]``.
    """
    n = model.n
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (n - 1,):
        raise SynthesisError(f"need {n - 1} ramp inflow bounds, got shape {r.shape}")
    a = model.jams
    c = model.supply_gains
    q = model.inflow_caps
    p = model.exit_splits
    theta = np.array([cert.theta_lower for cert in model.certificates])
    peaks = np.array([cell.demand(cell.demand.critical) for cell in model.cells])
    for k in range(2, n + 1):
        cap = min(q[k - 1], c[k - 1] * a[k - 1])
        if not 0 <= r[k - 2] < cap:
            raise SynthesisError(
                f"inflow bound for cell {k} must lie in [0, {cap}), got {r[k - 2]}"
            )
    y = theta[n - 1]
    for k in range(n, 1, -1):
        ak, ak1 = a[k - 1], a[k - 2]
        pk1 = p[k - 2]
        rk = r[k - 2]
        share = 1.0 + pk1 * (n + 1 - k)
        lk = min(1.0, (c[k - 1] * ak - rk) / (2.0 * (1.0 - pk1) * peaks[k - 2]))
        y = min(
            y,
            share / (n + 2 - k) * lk * theta[k - 2],
            ((n + 1 - k) * (ak - rk / c[k - 1]) * y)
            / (2.0 * (n + 1 - k) * ak + 2.0 * (n + 2 - k) * ak1),
            (q[k - 1] - rk) / (1.0 - pk1) * share / ((n + 2 - k) * ak1),
        )
    return float(y)


def _check_equilibrium(model, u_star, x_star):
    """Margins of a claimed equilibrium pair; returns the through-flows."""
    u = np.asarray(u_star, dtype=np.float64)
    x = np.asarray(x_star, dtype=np.float64)
    n = model.n
    if u.shape != (n,) or x.shape != (n,):
        raise NoEquilibriumError(
            f"equilibrium data must have {n} entries per cell"
        )
    p = model.exit_splits
    phi = np.empty(n)
    phi[0] = u[0]
    for i in range(1, n):
        phi[i] = u[i] + (1.0 - p[i - 1]) * phi[i - 1]
    for i, cell in enumerate(model.cells):
        bound = cell.demand.smooth_bound
        if not 0 < x[i] < bound * (1.0 - _MARGIN_SLACK):
            raise NoEquilibriumError(
                f"cell {i + 1} count {x[i]} is not strictly inside "
                f"the certified range (0, {bound})",
                cell=i + 1,
            )
        if abs(cell.demand(x[i]) - phi[i]) > 1e-9 * max(1.0, phi[i]):
            raise NoEquilibriumError(
                f"cell {i + 1} does not balance: demand at {x[i]} is "
                f"{cell.demand(x[i])}, sustained flow is {phi[i]}",
                cell=i + 1,
            )
        room = min(cell.inflow_cap, cell.supply_gain * (cell.jam - x[i]))
        if phi[i] >= room * (1.0 - _MARGIN_SLACK):
            raise NoEquilibriumError(
                f"cell {i + 1} flow {phi[i]} does not clear its receiving "
                f"capacity {room} strictly",
                cell=i + 1,
            )
    return phi


def compute_beta_mu(model, u_star, x_star):
    """Free-flow box data: per-cell caps beta, supply margins omega, bounds mu.

    ``beta[i]`` is where cell i's demand reaches the least of its certified
    peak and what the next cell can pass on, ``omega[i]`` the linear supply
    margin left at the equilibrium, and ``mu`` combines both into box bounds
    with ``x_star < mu <= beta``.
    """
    u = np.asarray(u_star, dtype=np.float64)
    x = np.asarray(x_star, dtype=np.float64)
    _check_equilibrium(model, u, x)
    n = model.n
    a = model.jams
    c = model.supply_gains
    q = model.inflow_caps
    p = model.exit_splits

    beta = np.empty(n)
    beta[n - 1] = model.cells[n - 1].demand.smooth_bound
    for i in range(n - 1):
        dem = model.cells[i].demand
        target = min(
            dem(dem.smooth_bound), (q[i + 1] - u[i + 1]) / (1.0 - p[i])
        )
        beta[i] = dem.invert_rising(target)

    omega = np.empty(n)
    omega[0] = c[0] * (a[0] - x[0]) - u[0]
    for i in range(1, n):
        upstream = (1.0 - p[i - 1]) * model.cells[i - 1].demand(x[i - 1])
        omega[i] = c[i] * (a[i] - x[i]) - u[i] - upstream

    mu = np.empty(n)
    for i in range(n - 1):
        mu[i] = min(
            beta[i],
            x[i] + omega[i] / (2.0 * c[i]),
            x[i] + omega[i + 1] / (2.0 * (1.0 - p[i])),
        )
    mu[n - 1] = min(beta[n - 1], x[n - 1] + omega[n - 1] / (2.0 * c[n - 1]))
    if not np.all(mu > x):
        raise SynthesisError("free-flow box degenerate: some mu_i <= x_i*")
    return beta, omega, mu


def _weighted_caps(model, x_star, mu):
    """The two ceilings constraining uncontrolled and floor inflow weight."""
    n = model.n
    iw = np.arange(n, 0, -1.0)
    p = model.exit_splits
    f_star = np.array(
        [cell.demand(xi) for cell, xi in zip(model.cells, x_star)]
    )
    flow_cap = float(np.min(((iw - 1.0) * p + 1.0) * f_star))
    box_cap = float(np.min(iw * np.asarray(mu)))
    return iw, flow_cap, box_cap


def select_R(
    model, u_star, C, mu, candidate_R=None, b=None, floor_ratio=0.05
):
    """Pick which ramp inflows must be actuated, with floors and slack.

    Returns ``(R, b, epsilon)`` where ``R`` is a sorted tuple of 1-based
    indices, ``b`` their inflow floors, and ``epsilon < 1`` the slack the
    floors leave against the drainage budget.  With ``candidate_R`` the
    set is verified instead of searched; with explicit ``b`` (mapping
    index -> floor) the floors are taken as given, otherwise they default
    to ``floor_ratio * u_i*`` scaled down to spend at most half of the
    remaining budget.
    """
    u = np.asarray(u_star, dtype=np.float64)
    n = model.n
    if C <= 0:
        raise SynthesisError(f"drainage constant must be positive, got {C}")
    x_star, _ = model.equilibrium_from_inflows(u)
    iw, flow_cap, box_cap = _weighted_caps(model, x_star, mu)
    drain_cap = C * box_cap

    def off_weight(R):
        return sum(iw[i - 1] * u[i - 1] for i in range(1, n + 1) if i not in R)

    def admissible(R):
        off = off_weight(R)
        return off < flow_cap and off < drain_cap

    if candidate_R is not None:
        R = tuple(sorted(set(int(i) for i in candidate_R)))
        if not R:
            raise InfeasibleControlSetError("the control set cannot be empty")
        for i in R:
            if not 1 <= i <= n:
                raise InfeasibleControlSetError(f"index {i} is out of range")
            if u[i - 1] <= 0:
                raise InfeasibleControlSetError(
                    f"inflow {i} has no equilibrium flow to meter"
                )
        if not admissible(R):
            off = off_weight(R)
            raise InfeasibleControlSetError(
                f"control set {R} leaves too much uncontrolled inflow weight",
                residuals=(off - flow_cap, off - drain_cap),
            )
    else:
        R = tuple(i for i in range(1, n + 1) if u[i - 1] > 0)
        if not admissible(R):
            off = off_weight(R)
            raise InfeasibleControlSetError(
                "even metering every positive inflow leaves the uncontrolled "
                "weight above a ceiling",
                residuals=(off - flow_cap, off - drain_cap),
            )
        # cheapest-first minimization: downstream indices carry the
        # smallest weights, so try to release them from the back
        for i in sorted(R, reverse=True):
            if len(R) == 1:
                break
            trial = tuple(j for j in R if j != i)
            if trial and admissible(trial):
                R = trial

    off = off_weight(R)
    if b is not None:
        floors = {int(i): float(v) for i, v in dict(b).items()}
        if set(floors) != set(R):
            raise InfeasibleControlSetError(
                f"floors given for {sorted(floors)} but the control set is {R}"
            )
        b_vec = [floors[i] for i in R]
        for i, bi in zip(R, b_vec):
            if not 0 < bi < u[i - 1]:
                raise InfeasibleControlSetError(
                    f"floor for inflow {i} must lie in (0, {u[i - 1]}), got {bi}"
                )
    else:
        if not 0 < floor_ratio < 1:
            raise SynthesisError(
                f"floor ratio must lie in (0, 1), got {floor_ratio}"
            )
        raw = [floor_ratio * u[i - 1] for i in R]
        raw_weight = sum(iw[i - 1] * bi for i, bi in zip(R, raw))
        budget = 0.5 * min(flow_cap - off, drain_cap - off)
        scale = min(1.0, budget / raw_weight)
        b_vec = [scale * bi for bi in raw]

    floor_weight = off + sum(iw[i - 1] * bi for i, bi in zip(R, b_vec))
    epsilon = max(floor_weight / flow_cap, floor_weight / drain_cap)
    if epsilon >= 1:
        raise InfeasibleControlSetError(
            f"floors leave no slack: epsilon = {epsilon}",
            residuals=(floor_weight - flow_cap, floor_weight - drain_cap),
        )
    return R, tuple(b_vec), float(epsilon)


def contraction_rate(model, sigma):
    """Cascade contraction factor for a given geometric weight."""
    holds = np.array([cert.hold_lipschitz for cert in model.certificates])
    gains = np.array([cert.flow_lipschitz for cert in model.certificates])
    p = model.exit_splits
    inner = holds[:-1] + sigma * gains[:-1] * (1.0 - p[:-1])
    return float(max(holds[-1], inner.max()))


def _default_sigma(model):
    holds = np.array([cert.hold_lipschitz for cert in model.certificates])
    gains = np.array([cert.flow_lipschitz for cert in model.certificates])
    p = model.exit_splits
    slack = gains[:-1] * (1.0 - p[:-1])
    with np.errstate(divide="ignore"):
        bounds = np.where(slack > 0, (1.0 - holds[:-1]) / slack, np.inf)
    sup = min(1.0, float(bounds.min()))
    return 0.9 * sup


def synthesize(
    model,
    u_star,
    *,
    sigma=None,
    eta=0.5,
    floor_ratio=0.05,
    b=None,
    candidate_R=None,
):
    """Full pipeline from a model and target inflows to a certificate.

    ``sigma`` overrides the geometric weight (default: 0.9 of its
    feasibility supremum); ``eta`` in (0, 1) places the gain parameter
    inside its admissible interval; ``b`` optionally fixes the floors as
    a mapping index -> value; ``candidate_R`` skips the control-set
    search.
    """
    u = np.asarray(u_star, dtype=np.float64)
    x_star, _ = model.equilibrium_from_inflows(u)
    n = model.n

    C = estimate_C(model, u[1:])
    beta, omega, mu = compute_beta_mu(model, u, x_star)
    R, b_vec, epsilon = select_R(
        model, u, C, mu, candidate_R=candidate_R, b=b, floor_ratio=floor_ratio
    )

    if sigma is None:
        sigma = _default_sigma(model)
    if not 0 < sigma <= 1:
        raise SynthesisError(f"geometric weight must lie in (0, 1], got {sigma}")
    L = contraction_rate(model, sigma)
    if L >= 1:
        raise SynthesisError(
            f"no contraction at geometric weight {sigma}: rate {L} >= 1"
        )
    if not 0 < eta < 1:
        raise SynthesisError(f"eta must lie in (0, 1), got {eta}")

    iw = np.arange(n, 0, -1.0)
    wpow = sigma ** np.arange(1, n + 1)
    h = float(np.min(wpow * (mu - x_star)))
    box_cap = float(np.min(iw * mu))
    load_star = float(iw @ x_star)
    Q = max(
        box_cap,
        (1.0 - C) * load_star
        + (1.0 - C) * h * float(np.max(iw / wpow))
        + float(iw @ u),
    )
    theta = (Q - epsilon * box_cap) / h
    lever = sum(iw[i - 1] * (u[i - 1] - bi) for i, bi in zip(R, b_vec))
    tau_star = min(h, lever / (theta * L))
    tau = eta * tau_star
    gamma = tuple((u[i - 1] - bi) / tau for i, bi in zip(R, b_vec))

    weight_A = 1.0 + sum(
        wpow[i - 1] * g for i, g in zip(R, gamma)
    ) / (1.0 - L)
    span = model.jams - x_star
    weight_K = (
        float(wpow @ np.maximum(span, x_star))
        + weight_A * float(wpow @ span)
        - (weight_A + L) * h
    ) / ((1.0 - epsilon) * C * box_cap)

    K1 = float(sigma**n)
    K2 = (1.0 + weight_A + weight_K * theta) * float(wpow.sum()) + weight_K * float(
        iw.sum()
    )
    defect = (1.0 - L) * K1 / K2
    L_tilde = 1.0 - defect

    return StabilizerCertificate(
        sigma=float(sigma),
        L=L,
        C=C,
        beta=tuple(float(v) for v in beta),
        omega=tuple(float(v) for v in omega),
        mu=tuple(float(v) for v in mu),
        R=R,
        b=b_vec,
        epsilon=epsilon,
        h=h,
        Q=float(Q),
        penalty_slope=float(theta),
        tau_star=float(tau_star),
        tau=float(tau),
        gamma=gamma,
        weight_A=float(weight_A),
        weight_K=float(weight_K),
        K1=K1,
        K2=float(K2),
        L_tilde=float(L_tilde),
        decrease_defect=float(defect),
        x_star=tuple(float(v) for v in x_star),
        u_star=tuple(float(v) for v in u),
    )
