"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Array dimensions disagree (policy vs. MDP, measure vs. cost, ...)."""


class UnsupportedDiscountError(ValueError):
    """A fixed-point routine was asked to run with gamma = 1."""


class ConvergenceError(RuntimeError):
    """An iteration hit its budget before meeting its tolerance."""


class PartitionArityError(ValueError):
    """A two-component formula was given a partition with L != 2."""


class InfeasibleTransportError(ValueError):
    """Source and target measures carry different total mass."""


class FormatError(ValueError):
    """A text file or config block could not be parsed."""
