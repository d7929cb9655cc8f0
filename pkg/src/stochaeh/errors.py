"""Exception hierarchy shared by all modules."""


class AEHError(Exception):
    """Base class for every error raised by this package."""


class DomainError(AEHError, ValueError):
    """An argument lies outside its admissible domain."""


class SingularTensorError(AEHError):
    """A stiffness or compliance inversion failed."""


class JammingError(AEHError):
    """Random sequential placement could not reach the target fraction."""

    def __init__(self, message, achieved_fraction=None):
        super().__init__(message)
        self.achieved_fraction = achieved_fraction


class HeaderError(AEHError, ValueError):
    """A voxel header is malformed."""


class SizeMismatchError(AEHError, ValueError):
    """Raw voxel data does not match the declared dimensions."""


class OutOfBoundsError(AEHError, IndexError):
    """A requested sub-volume exceeds the grid."""


class EmptyPairError(AEHError, ValueError):
    """A covariance lag has no valid point pairs."""


class NoCrossingError(AEHError):
    """The covariogram never enters the tolerance band around its asymptote."""


class LengthOrderError(AEHError):
    """Extracted characteristic lengths violate 0 < l0 < l1."""


class DimsTooSmallError(AEHError, ValueError):
    """The grid is too thin to build a periodic hexahedral mesh."""


class ConvergenceError(AEHError):
    """The conjugate gradient solver did not reach its tolerance."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class SolvabilityError(AEHError):
    """The load of a periodic cell problem does not have zero mean."""


class MixedMaterialError(AEHError, ValueError):
    """Homogenized sets built from different phase materials were combined."""


class ImageTooSmallError(AEHError, ValueError):
    """An image is smaller than the volume element it must provide."""


class BoundsGateError(AEHError):
    """A homogenized energy fell outside the Voigt-Reuss interval."""
