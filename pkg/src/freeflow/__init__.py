"""Freeway ramp-metering models, stabilizing control, and certificates."""

from freeflow.control import (
    ConstantInflow,
    RlbPiController,
    RlbPiParams,
    StabilizingFeedback,
)
from freeflow.demand import DemandCertificate, PiecewiseLinearDemand
from freeflow.errors import (
    DemandValidationError,
    DomainError,
    FreeflowError,
    InfeasibleControlSetError,
    InfeasibleFlowError,
    ModelValidationError,
    NoEquilibriumError,
    ScenarioError,
    SynthesisError,
)
from freeflow.lyapunov import LyapunovFunction, verify_decrease, verify_sandwich
from freeflow.model import CellParams, FreewayModel, StepFlows
from freeflow.scenario import ScenarioConfig, bundled_scenarios, load_scenario
from freeflow.simulate import (
    AdversarialDisturbance,
    ConstantDisturbance,
    MeasurementError,
    RunRecord,
    UniformDisturbance,
    settling_time,
    simulate,
    vef,
)
from freeflow.suite import property_suite
from freeflow.synthesis import (
    StabilizerCertificate,
    compute_beta_mu,
    estimate_C,
    select_R,
    synthesize,
)

__version__ = "0.1.0"

__all__ = [
    "AdversarialDisturbance",
    "CellParams",
    "ConstantDisturbance",
    "ConstantInflow",
    "DemandCertificate",
    "DemandValidationError",
    "DomainError",
    "FreeflowError",
    "FreewayModel",
    "InfeasibleControlSetError",
    "InfeasibleFlowError",
    "LyapunovFunction",
    "MeasurementError",
    "ModelValidationError",
    "NoEquilibriumError",
    "PiecewiseLinearDemand",
    "RlbPiController",
    "RlbPiParams",
    "RunRecord",
    "ScenarioConfig",
    "ScenarioError",
    "StabilizerCertificate",
    "StabilizingFeedback",
    "StepFlows",
    "SynthesisError",
    "UniformDisturbance",
    "bundled_scenarios",
    "compute_beta_mu",
    "estimate_C",
    "load_scenario",
    "property_suite",
    "select_R",
    "settling_time",
    "simulate",
    "synthesize",
    "vef",
    "verify_decrease",
    "verify_sandwich",
    "__version__",
]
