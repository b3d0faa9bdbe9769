"""Exceptions raised by the solver.

Every error carries a machine-readable ``code`` (written to ``error.json`` by
the command line) and the process exit code it maps to.
"""
from parashoot.types.enums import ExitCode


class ParashootError(Exception):
    code = "error"
    exit_code = ExitCode.HARD_ERROR

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self):
        payload = {"error": self.code, "message": str(self)}
        payload.update({
            key: value for key, value in self.details.items()
            if isinstance(value, (str, int, float, bool, list, tuple))
        })
        return payload


# Potentials
class SingularityError(ParashootError):
    code = "singularity"


class DomainError(ParashootError):
    code = "domain"


# Homotopy
class EndpointRadiusError(ParashootError):
    code = "endpoint-radius-mismatch"


class CoincidentEndpointsError(ParashootError):
    code = "coincident-endpoints"


class PointOnPathError(ParashootError):
    code = "point-on-path"


class IllConditionedWindingError(ParashootError):
    code = "ill-conditioned-winding"


class InvalidPartitionError(ParashootError):
    code = "invalid-partition"
    exit_code = ExitCode.CONFIG_ERROR


# Variational
class InadmissibleClassError(ParashootError):
    code = "inadmissible-class"


class ClassMismatchError(ParashootError):
    code = "class-mismatch"


class ClassChangeError(ParashootError):
    code = "class-change-unrecoverable"


class MaxIterationsError(ParashootError):
    code = "max-iterations"
    exit_code = ExitCode.NON_CONVERGED


class LineSearchError(ParashootError):
    code = "line-search-stalled"
    exit_code = ExitCode.NON_CONVERGED


class BarrierSaturatedError(ParashootError):
    code = "collision-barrier-saturated"


class NoRoutingError(ParashootError):
    code = "no-routing-found"


class DegeneratePathError(ParashootError):
    code = "degenerate-path"


class NodeTooCloseError(ParashootError):
    code = "node-too-close-to-centre"


class EnergyResidualError(ParashootError):
    code = "energy-residual-too-large"
    exit_code = ExitCode.NON_CONVERGED


# Integrator
class NonZeroEnergyError(ParashootError):
    code = "nonzero-energy"


class CloseEncounterError(ParashootError):
    code = "close-encounter"


class StepUnderflowError(ParashootError):
    code = "step-underflow"


class WrongAlphaError(ParashootError):
    code = "wrong-alpha"


class OverlappingRegularizationError(ParashootError):
    code = "overlapping-regularization"


class EnergyDriftError(ParashootError):
    code = "energy-drift"


# Entire solutions
class RingCrossingError(ParashootError):
    code = "ring-crossing-count"


class TailTooShortError(ParashootError):
    code = "tail-too-short"


class InsufficientSpanError(ParashootError):
    code = "insufficient-span"


class InsufficientDataError(ParashootError):
    code = "insufficient-data"


class WindowTooShortError(ParashootError):
    code = "window-too-short"


class ScheduleError(ParashootError):
    code = "invalid-schedule"
    exit_code = ExitCode.CONFIG_ERROR


# Command line
class ConfigError(ParashootError):
    code = "invalid-config"
    exit_code = ExitCode.CONFIG_ERROR


class NonConvergedError(ParashootError):
    code = "non-converged"
    exit_code = ExitCode.NON_CONVERGED
