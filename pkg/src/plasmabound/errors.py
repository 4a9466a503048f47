"""Exception types raised across the package."""


class PlasmaBoundError(Exception):
    """Base class for all package errors."""

    stage = "unknown"


class DomainError(PlasmaBoundError, ValueError):
    stage = "special_functions"


class PoleSingularity(PlasmaBoundError, ValueError):
    stage = "toroidal_coordinates"


class AxisDomain(PlasmaBoundError, ValueError):
    stage = "toroidal_coordinates"


class FilamentSingularity(PlasmaBoundError, ValueError):
    stage = "magnetostatics"


class PoleOutsideHull(PlasmaBoundError, ValueError):
    stage = "fit"


class MissingCurrent(PlasmaBoundError, KeyError):
    stage = "fit"


class RankDeficient(PlasmaBoundError, ArithmeticError):
    stage = "fit"

    def __init__(self, message, rank=None):
        super().__init__(message)
        self.rank = rank


class ZeroCurrent(PlasmaBoundError, ValueError):
    stage = "current_center"


class GeometryError(PlasmaBoundError, ValueError):
    stage = "mesh"


class MeshQualityError(PlasmaBoundError, ValueError):
    stage = "mesh"


class SingularMatrix(PlasmaBoundError, ArithmeticError):
    stage = "fem"


class SingularControlSystem(PlasmaBoundError, ArithmeticError):
    stage = "control"


class EmptyBank(PlasmaBoundError, LookupError):
    stage = "mesh_bank"


class NoClosedContour(PlasmaBoundError, ValueError):
    stage = "boundary"


class VersionMismatch(PlasmaBoundError, ValueError):
    stage = "cache"


class MachineMismatch(PlasmaBoundError, ValueError):
    stage = "cache"


class OverflowWarning(RuntimeWarning):
    """Emitted when a Legendre value leaves the representable float range."""
