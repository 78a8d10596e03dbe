"""Exception types shared across the package."""


class InfeasibleError(ValueError):
    """No incoherent clip satisfies the constraints for this video."""


class FormatError(ValueError):
    """A binary container or text file does not match its declared layout."""


class DegenerateInputError(ValueError):
    """An operation received input it is undefined on (e.g. a zero vector)."""
