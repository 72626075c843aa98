"""Scenario documents: JSON descriptions of a network, a run, and controllers.

A scenario bundles everything one simulation needs: the freeway model,
the target inflows, one or more controller blocks, disturbance and
measurement policies, the horizon, and the initial state.  Parsing is
strict: unknown keys anywhere in the document raise ScenarioError, so a
typo never silently changes a run.

Controller blocks come in three flavors, selected by ``"type"``:

* ``"stabilizer"`` -- the saturated proportional law.  With explicit
  ``sigma``/``gamma``/``floor`` entries the gains are used as given;
  with none of them the gains come from a synthesized certificate
  (optionally tuned through the scenario's ``"synthesis"`` block).
* ``"rlb_pi"`` -- the PI regulator bank; keys mirror RlbPiParams.
* ``"constant"`` -- fixed inflows, defaulting to the scenario targets.

``build_*`` helpers turn blocks into live objects, and run() executes
the scenario end to end.  The command-line front end calls the same
helpers, so CLI runs and library runs are bit-identical.
"""

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .control import ConstantInflow, RlbPiController, RlbPiParams, StabilizingFeedback
from .errors import NoEquilibriumError, ScenarioError
from .lyapunov import LyapunovFunction
from .model import FreewayModel
from .simulate import (
    AdversarialDisturbance,
    ConstantDisturbance,
    MeasurementError,
    UniformDisturbance,
    simulate,
)
from .synthesis import synthesize

_TOP_KEYS = {
    "model",
    "inflows",
    "controller",
    "controllers",
    "disturbance",
    "measurement",
    "horizon",
    "x0",
    "seed",
    "synthesis",
    "out",
}

_CONTROLLER_KEYS = {
    "stabilizer": {"type", "sigma", "gamma", "floor", "controlled"},
    "rlb_pi": {
        "type",
        "proportional_gain",
        "integral_gain",
        "headroom",
        "smoothing",
        "command_min",
        "command_max",
        "initial_command",
        "setpoints",
        "track_realized_inflow",
        "other_inflows",
    },
    "constant": {"type", "inflows"},
}

_DISTURBANCE_KEYS = {
    "constant": {"policy", "value"},
    "uniform": {"policy", "seed"},
    "adversarial": {"policy", "levels"},
}

_MEASUREMENT_KEYS = {"magnitude", "direction", "frequency", "seed"}

_SYNTHESIS_KEYS = {"sigma", "eta", "floor_ratio", "floors", "controlled"}


def _check_block(block, known, what):
    if not isinstance(block, dict):
        raise ScenarioError(f"{what} must be a JSON object, got {type(block).__name__}")
    extra = set(block) - known
    if extra:
        raise ScenarioError(f"unknown {what} keys: {sorted(extra)}")


def _check_controller_block(block, what="controller"):
    if not isinstance(block, dict):
        raise ScenarioError(f"{what} must be a JSON object, got {type(block).__name__}")
    kind = block.get("type")
    if kind not in _CONTROLLER_KEYS:
        raise ScenarioError(
            f"{what} type must be one of {sorted(_CONTROLLER_KEYS)}, got {kind!r}"
        )
    _check_block(block, _CONTROLLER_KEYS[kind], what)
    if kind == "stabilizer":
        tuned = [k for k in ("sigma", "gamma", "floor") if k in block]
        if tuned and len(tuned) != 3:
            raise ScenarioError(
                "stabilizer block needs sigma, gamma, and floor together "
                f"(or none of them for certificate gains), got only {tuned}"
            )


def _check_disturbance_block(block):
    if not isinstance(block, dict):
        raise ScenarioError(
            f"disturbance must be a JSON object, got {type(block).__name__}"
        )
    policy = block.get("policy")
    if policy not in _DISTURBANCE_KEYS:
        raise ScenarioError(
            f"disturbance policy must be one of {sorted(_DISTURBANCE_KEYS)}, "
            f"got {policy!r}"
        )
    _check_block(block, _DISTURBANCE_KEYS[policy], "disturbance")


@dataclass(frozen=True)
class ScenarioConfig:
    """Parsed scenario document.

    ``controller`` names an entry of ``controllers`` or holds an inline
    block; ``x0`` is a per-cell vector or the string "equilibrium";
    ``seed`` is the fallback for policies whose blocks omit their own.
    """

    model: FreewayModel
    inflows: tuple
    controller: object = None
    controllers: dict = field(default_factory=dict)
    disturbance: dict = None
    measurement: dict = None
    horizon: int = None
    x0: object = None
    seed: int = None
    synthesis: dict = field(default_factory=dict)
    out: str = None

    @classmethod
    def from_dict(cls, doc):
        _check_block(doc, _TOP_KEYS, "scenario")
        missing = {"model", "inflows"} - set(doc)
        if missing:
            raise ScenarioError(f"missing scenario keys: {sorted(missing)}")
        model = FreewayModel.from_dict(doc["model"])

        inflows = doc["inflows"]
        if not isinstance(inflows, (list, tuple)) or len(inflows) != model.n:
            raise ScenarioError(
                f"inflows must list one target per cell ({model.n} values)"
            )
        inflows = tuple(float(v) for v in inflows)
        if not all(np.isfinite(v) and v >= 0 for v in inflows):
            raise ScenarioError("inflow targets must be finite and nonnegative")

        controllers = doc.get("controllers", {})
        if not isinstance(controllers, dict):
            raise ScenarioError("controllers must map names to controller blocks")
        for name, block in controllers.items():
            _check_controller_block(block, what=f"controller {name!r}")

        controller = doc.get("controller")
        if isinstance(controller, str):
            if controller not in controllers:
                raise ScenarioError(
                    f"controller {controller!r} is not defined; scenario "
                    f"defines {sorted(controllers)}"
                )
        elif controller is not None:
            _check_controller_block(controller)

        disturbance = doc.get("disturbance")
        if disturbance is not None:
            _check_disturbance_block(disturbance)

        measurement = doc.get("measurement")
        if measurement is not None:
            _check_block(measurement, _MEASUREMENT_KEYS, "measurement")

        horizon = doc.get("horizon")
        if horizon is not None:
            if horizon != int(horizon) or int(horizon) < 0:
                raise ScenarioError(f"horizon must be a nonnegative integer, got {horizon}")
            horizon = int(horizon)

        x0 = doc.get("x0")
        if isinstance(x0, str):
            if x0 != "equilibrium":
                raise ScenarioError(
                    f'x0 must be a vector or the string "equilibrium", got {x0!r}'
                )
        elif x0 is not None:
            if not isinstance(x0, (list, tuple)) or len(x0) != model.n:
                raise ScenarioError(f"x0 must list one count per cell ({model.n} values)")
            x0 = tuple(float(v) for v in x0)

        seed = doc.get("seed")
        if seed is not None:
            seed = int(seed)

        synthesis_opts = doc.get("synthesis", {})
        _check_block(synthesis_opts, _SYNTHESIS_KEYS, "synthesis")

        out = doc.get("out")
        if out is not None and not isinstance(out, str):
            raise ScenarioError("out must be a path string")

        return cls(
            model=model,
            inflows=inflows,
            controller=copy.deepcopy(controller),
            controllers=copy.deepcopy(controllers),
            disturbance=copy.deepcopy(disturbance),
            measurement=copy.deepcopy(measurement),
            horizon=horizon,
            x0=x0,
            seed=seed,
            synthesis=copy.deepcopy(synthesis_opts),
            out=out,
        )

    def to_dict(self):
        doc = {"model": self.model.to_dict(), "inflows": list(self.inflows)}
        if self.controller is not None:
            doc["controller"] = copy.deepcopy(self.controller)
        if self.controllers:
            doc["controllers"] = copy.deepcopy(self.controllers)
        if self.disturbance is not None:
            doc["disturbance"] = copy.deepcopy(self.disturbance)
        if self.measurement is not None:
            doc["measurement"] = copy.deepcopy(self.measurement)
        if self.horizon is not None:
            doc["horizon"] = self.horizon
        if self.x0 is not None:
            doc["x0"] = list(self.x0) if not isinstance(self.x0, str) else self.x0
        if self.seed is not None:
            doc["seed"] = self.seed
        if self.synthesis:
            doc["synthesis"] = copy.deepcopy(self.synthesis)
        if self.out is not None:
            doc["out"] = self.out
        return doc


def bundled_scenarios():
    """Names of the scenario files shipped inside the package."""
    root = resources.files("freeflow").joinpath("scenarios")
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".json"))


def load_scenario(source):
    """Load a scenario from a filesystem path or a bundled file name."""
    path = Path(source)
    if path.exists():
        text = path.read_text()
    else:
        candidate = resources.files("freeflow").joinpath("scenarios", str(source))
        if "/" not in str(source) and candidate.is_file():
            text = candidate.read_text()
        else:
            raise ScenarioError(
                f"no scenario file {source!r}: not a path, and the bundled "
                f"scenarios are {bundled_scenarios()}"
            )
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON in {source}: {exc}") from None
    return ScenarioConfig.from_dict(doc)


def _controller_block(config, name=None):
    if name is not None:
        if name not in config.controllers:
            raise ScenarioError(
                f"controller {name!r} is not defined; scenario defines "
                f"{sorted(config.controllers)}"
            )
        return config.controllers[name]
    block = config.controller
    if isinstance(block, str):
        return config.controllers[block]
    if block is None:
        raise ScenarioError("scenario defines no controller")
    return block


def needs_certificate(config, name=None):
    """Whether running this scenario requires a synthesized certificate."""
    try:
        block = _controller_block(config, name)
    except ScenarioError:
        block = None
    cert_gains = (
        block is not None
        and block["type"] == "stabilizer"
        and "gamma" not in block
    )
    adversarial = (
        config.disturbance is not None
        and config.disturbance.get("policy") == "adversarial"
    )
    return cert_gains or adversarial


def build_certificate(config):
    """Synthesize the scenario's stability certificate.

    The scenario's ``"synthesis"`` block tunes the pipeline: ``sigma``,
    ``eta``, ``floor_ratio``, per-inflow ``floors`` (index -> value),
    and a fixed ``controlled`` index set.
    """
    opts = config.synthesis
    floors = opts.get("floors")
    if floors is not None:
        try:
            floors = {int(k): float(v) for k, v in floors.items()}
        except (TypeError, ValueError, AttributeError):
            raise ScenarioError(
                "synthesis floors must map inflow indices to values"
            ) from None
    candidate = opts.get("controlled")
    if candidate is not None:
        candidate = tuple(int(i) for i in candidate)
    return synthesize(
        config.model,
        config.inflows,
        sigma=opts.get("sigma"),
        eta=opts.get("eta", 0.5),
        floor_ratio=opts.get("floor_ratio", 0.05),
        b=floors,
        candidate_R=candidate,
    )


def build_controller(config, name=None, cert=None):
    """Instantiate a controller from its scenario block.

    ``name`` selects an entry of the scenario's ``controllers`` mapping
    (default: the scenario's own ``controller``).  A stabilizer block
    without explicit gains takes them from ``cert``, synthesizing one
    when none is passed.
    """
    block = _controller_block(config, name)
    _check_controller_block(block)
    kind = block["type"]
    model = config.model

    if kind == "constant":
        return ConstantInflow(tuple(block.get("inflows", config.inflows)))

    if kind == "rlb_pi":
        fields = {
            k: block[k]
            for k in block
            if k not in ("type", "other_inflows", "setpoints")
        }
        if block.get("setpoints") is not None:
            fields["setpoints"] = tuple(block["setpoints"])
        try:
            params = RlbPiParams(**fields)
        except ValueError as exc:
            raise ScenarioError(f"rlb_pi block: {exc}") from None
        other = block.get("other_inflows")
        if other is None:
            other = config.inflows[1:]
        return RlbPiController(model, params, other_inflows=tuple(other))

    if "gamma" in block:
        x_star, _ = model.equilibrium_from_inflows(config.inflows)
        controlled = block.get("controlled")
        if controlled is None:
            controlled = [i + 1 for i, u in enumerate(config.inflows) if u > 0]
        controlled = tuple(int(i) for i in controlled)
        gamma = block["gamma"]
        floor = block["floor"]
        if np.isscalar(gamma):
            gamma = (float(gamma),) * len(controlled)
        if np.isscalar(floor):
            floor = (float(floor),) * len(controlled)
        try:
            return StabilizingFeedback(
                x_star=tuple(x_star),
                u_star=config.inflows,
                sigma=float(block["sigma"]),
                R=controlled,
                gamma=tuple(gamma),
                b=tuple(floor),
            )
        except ValueError as exc:
            raise ScenarioError(f"stabilizer block: {exc}") from None

    if cert is None:
        cert = build_certificate(config)
    return StabilizingFeedback.from_certificate(cert)


def build_disturbance(config, cert=None):
    """Instantiate the merge-priority policy (default: constant 0.5)."""
    block = config.disturbance
    if block is None:
        return ConstantDisturbance()
    policy = block["policy"]
    if policy == "constant":
        return ConstantDisturbance(float(block.get("value", 0.5)))
    if policy == "uniform":
        seed = block.get("seed", config.seed)
        return UniformDisturbance(int(seed) if seed is not None else 0)
    if cert is None:
        cert = build_certificate(config)
    lyap = LyapunovFunction.from_certificate(cert)
    levels = block.get("levels")
    if levels is None:
        return AdversarialDisturbance(lyap)
    return AdversarialDisturbance(lyap, levels=tuple(levels))


def build_measurement(config):
    """Instantiate the measurement-error policy, or None when absent."""
    block = config.measurement
    if block is None:
        return None
    fields = {k: block[k] for k in block}
    if "seed" not in fields and config.seed is not None:
        fields["seed"] = config.seed
    try:
        return MeasurementError(**fields)
    except ValueError as exc:
        raise ScenarioError(f"measurement block: {exc}") from None


def resolve_x0(config):
    """The scenario's initial state as an array."""
    if config.x0 is None:
        raise ScenarioError("scenario has no initial state x0")
    if isinstance(config.x0, str):
        x_star, _ = config.model.equilibrium_from_inflows(config.inflows)
        return np.asarray(x_star, dtype=np.float64)
    return np.asarray(config.x0, dtype=np.float64)


def run(config, *, controller=None, cert=None, horizon=None, seed=None):
    """Execute the scenario end to end and return the RunRecord.

    ``controller`` picks a named block (for comparisons); ``cert``
    supplies a pre-synthesized certificate; ``horizon`` and ``seed``
    override the scenario's values.  Block-level seeds always win over
    the scenario seed.
    """
    if seed is not None:
        config = dataclasses.replace(config, seed=int(seed))
    if horizon is None:
        horizon = config.horizon
    if horizon is None:
        raise ScenarioError("scenario has no horizon")

    if cert is None and needs_certificate(config, controller):
        cert = build_certificate(config)

    ctrl = build_controller(config, name=controller, cert=cert)
    disturbance = build_disturbance(config, cert=cert)
    measurement = build_measurement(config)

    if cert is not None:
        x_star = np.asarray(cert.x_star, dtype=np.float64)
        lyap = LyapunovFunction.from_certificate(cert)
    else:
        lyap = None
        try:
            x_star, _ = config.model.equilibrium_from_inflows(config.inflows)
        except NoEquilibriumError:
            x_star = None

    return simulate(
        config.model,
        ctrl,
        resolve_x0(config),
        horizon,
        disturbance=disturbance,
        measurement=measurement,
        x_star=x_star,
        lyap=lyap,
    )
