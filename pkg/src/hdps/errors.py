"""Exception types raised by the pipeline."""


class HdpsError(ValueError):
    """Base class for configuration and input errors."""


class InvalidSpecError(HdpsError):
    """A coefficient or design specification violates its invariants."""


class RegimeError(HdpsError):
    """The configuration lies outside the admissible threshold window."""


class SingularDesignError(HdpsError):
    """The selected Gram submatrix is numerically singular."""


class DegenerateNullWarning(UserWarning):
    """The plug-in null spectrum is empty, so the null law is a point mass at 0."""
