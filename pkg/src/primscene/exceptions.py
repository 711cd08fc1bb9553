"""Exception hierarchy shared by all primscene modules."""


class PrimSceneError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(PrimSceneError, ValueError):
    """Invalid configuration, grid spec, shape or argument combination."""


class InvalidRotationError(PrimSceneError, ValueError):
    pass


class NotPositiveDefiniteError(PrimSceneError, ValueError):
    pass


class LayoutParseError(PrimSceneError, ValueError):
    """A layout or binary file could not be parsed."""


class UnsupportedVersionError(PrimSceneError, ValueError):
    pass


class NotFoundError(PrimSceneError, KeyError):
    pass


class InvalidEditError(PrimSceneError, ValueError):
    pass


class MissingStatsError(PrimSceneError, KeyError):
    pass


class GeometryError(PrimSceneError, ValueError):
    """Polygon could not be triangulated (self-intersecting or degenerate)."""


class InvalidCostError(PrimSceneError, ValueError):
    pass


class InvalidProbabilityError(PrimSceneError, ValueError):
    pass


class InvalidVarianceError(PrimSceneError, ValueError):
    pass


class InvalidMomentsError(PrimSceneError, ValueError):
    pass


class DenoiserUnavailableError(PrimSceneError, RuntimeError):
    pass


class ProtocolError(PrimSceneError, RuntimeError):
    pass
