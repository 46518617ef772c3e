"""Exception types shared across the package."""


class PhasecapError(Exception):
    """Base class for every error raised by this package."""


class SchemaError(PhasecapError):
    """Feeder file content violates the JSON schema."""


class TopologyError(PhasecapError):
    """Branch set is not a spanning tree rooted at the slack bus."""


class UnitError(PhasecapError):
    """Non-positive power or voltage base."""


class MissingPhase(PhasecapError):
    """Requested phase is absent on a branch that carries downstream load."""


class NonTransposed(PhasecapError):
    """Exact decoupling requested but mutual impedances are not identical."""


class SingularBase(PhasecapError):
    """Slack voltage is zero or negative."""


class NonConvergence(PhasecapError):
    """Load flow failed to converge.

    Carries the last iterate so callers can inspect how far the sweep got.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class DimensionMismatch(PhasecapError):
    """Matrices, expansion point and feeder disagree on problem size."""


class InvalidConfig(PhasecapError):
    """Hosting-capacity configuration fails its own invariants."""


class Infeasible(PhasecapError):
    """The convex program has no feasible point."""


class SolverError(PhasecapError):
    """Backend solver failed or returned an unverifiable solution."""


class MixedStatus(PhasecapError):
    """Per-phase solutions cannot be aggregated because one is not optimal."""


class ArgumentError(PhasecapError, ValueError):
    """Out-of-range argument to a generator or method entry point."""
