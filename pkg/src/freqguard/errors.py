"""Exception hierarchy shared across the package."""

from __future__ import annotations


class FreqGuardError(Exception):
    """Base class for all package errors."""


class ParseError(FreqGuardError):
    """A network or scenario file could not be parsed."""


class ValidationError(FreqGuardError):
    """Input parsed but violates a structural or physical invariant."""


class SingularityError(FreqGuardError):
    """The weighted Laplacian has a nullspace larger than span(1)."""


class ConvergenceError(FreqGuardError):
    """An iterative solver hit its iteration limit."""


class OutsideGammaError(ConvergenceError):
    """The equilibrium iteration left the closed angle box and could not recover."""


class MissingParameterError(FreqGuardError):
    """An optional parameter required by this operation was not supplied."""


class BlowupError(FreqGuardError):
    """A simulated frequency exceeded the configured guard."""


class BoundError(FreqGuardError):
    """A measurement-error amplitude exceeds its declared bound."""


class DomainError(FreqGuardError):
    """An argument lies outside the domain where the quantity is defined."""


class NotReachedError(FreqGuardError):
    """A target level was not attained within the integration horizon."""


class InfeasibleError(FreqGuardError):
    """An optimization problem has an empty feasible set."""


class DegreeError(FreqGuardError):
    """Node degree exceeds the enumeration guard."""
