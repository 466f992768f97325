"""Exception hierarchy shared across the toolkit."""


class GeoForgeError(Exception):
    """Base class for all toolkit errors."""


class InvalidBBox(GeoForgeError):
    pass


class MalformedResponse(GeoForgeError):
    pass


class NetworkError(GeoForgeError):
    pass


class FixtureMissing(GeoForgeError):
    """Offline mode was asked for a fixture that is not on disk."""


class OutOfProjection(GeoForgeError):
    pass


class TileDecodeError(GeoForgeError):
    pass


class FootprintOutsideImage(GeoForgeError):
    pass


class MissingCredentials(GeoForgeError):
    pass


class ProviderError(GeoForgeError):
    pass


class DegenerateFootprint(GeoForgeError):
    pass


class EmptyGrid(GeoForgeError):
    pass


class FormatError(GeoForgeError):
    pass


class ResolutionMismatch(GeoForgeError):
    pass


class NonPositiveStd(GeoForgeError):
    pass


class EmptyCorpus(GeoForgeError):
    pass


class LambdaOutOfRange(GeoForgeError):
    pass


class ShapeMismatch(GeoForgeError):
    pass


class NonFiniteState(GeoForgeError):
    pass
