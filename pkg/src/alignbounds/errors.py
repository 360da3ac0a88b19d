"""Exception types raised by the bound and registration routines."""


class AlignBoundsError(Exception):
    """Base class for all package errors."""


class InvalidGeometry(AlignBoundsError, ValueError):
    pass


class InvalidSnr(AlignBoundsError, ValueError):
    pass


class UnsupportedModel(AlignBoundsError, TypeError):
    pass


class UnsupportedShape(AlignBoundsError, ValueError):
    pass


class SingularGradient(AlignBoundsError, ArithmeticError):
    """The gradient-energy matrix of the latent image is not invertible."""


class SingularInformation(AlignBoundsError, ArithmeticError):
    """The stochastic Fisher information matrix is not invertible."""


class NoTransition(AlignBoundsError, ArithmeticError):
    """A threshold equation has no sign change on the search interval."""

    def __init__(self, message, lo_db=None, hi_db=None, f_lo=None, f_hi=None):
        super().__init__(message)
        self.lo_db = lo_db
        self.hi_db = hi_db
        self.f_lo = f_lo
        self.f_hi = f_hi


class DegenerateInput(AlignBoundsError, ValueError):
    """Registration input carries no signal (e.g. all zeros)."""


class NotObserved(AlignBoundsError, LookupError):
    """A Monte Carlo transition does not fall inside the swept grid."""
