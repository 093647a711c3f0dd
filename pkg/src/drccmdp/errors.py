"""Exception types shared across the package."""


class DrccmdpError(Exception):
    """Base class for all package errors."""


class InvalidModel(DrccmdpError):
    """An MDP or ambiguity description violates its invariants."""


class DomainError(DrccmdpError, ValueError):
    """A parameter lies outside the domain of a formula."""


class InfeasibleTransform(DrccmdpError):
    """The phi-divergence risk level reached 1, so no finite reward level exists."""


class SolverFailure(DrccmdpError):
    """The conic backend broke down or returned an unusable status."""
