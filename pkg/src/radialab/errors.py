"""Exception hierarchy shared across radialab modules."""


class RadialabError(Exception):
    """Base class for all library errors."""


class NumericalError(RadialabError):
    """A numerical procedure failed (mapped to CLI exit code 3)."""


class NonConvergence(NumericalError):
    pass


class DivergentIntegral(NumericalError):
    pass


class BracketFailure(NumericalError):
    pass


class EmptySample(RadialabError, ValueError):
    pass


class ShapeDomainError(RadialabError, ValueError):
    """An accessor was called on a shape that does not support it."""


class MissingTail(ShapeDomainError):
    pass


class RegularityFailure(RadialabError):
    pass


class NonIntegerDimension(RadialabError, ValueError):
    pass


class ConfigError(RadialabError, ValueError):
    """Invalid experiment configuration (mapped to CLI exit code 2)."""
