"""Exception types raised across the package."""


class FreeflowError(Exception):
    """Base class for all errors raised by this package."""


class DemandValidationError(FreeflowError):
    """A demand curve violates the structural assumptions.

    Carries the failed condition and, when one is involved, the offending
    segment as a (lo, hi) density interval.
    """

    def __init__(self, message, segment=None):
        super().__init__(message)
        self.segment = segment


class DomainError(FreeflowError, ValueError):
    """A density was evaluated outside the curve's domain."""


class InfeasibleFlowError(FreeflowError, ValueError):
    """A requested flow exceeds what the rising branch can deliver."""


class ModelValidationError(FreeflowError):
    """Cell parameters or network structure are inconsistent."""


class NoEquilibriumError(FreeflowError):
    """No uncongested equilibrium exists for the requested inflows.

    The message names the first cell where a feasibility or margin
    condition fails; `cell` holds its 1-based index.
    """

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


class InfeasibleControlSetError(FreeflowError):
    """No admissible controlled-inflow floor exists for the candidate set.

    `residuals` holds the two budget residuals (uncontrolled-demand cap,
    weighted-density cap); positive means violated.
    """

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class SynthesisError(FreeflowError):
    """The gain-synthesis pipeline cannot produce a valid certificate."""


class ScenarioError(FreeflowError):
    """A scenario/config document is malformed."""
