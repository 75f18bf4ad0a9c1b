"""Exception types raised across the package."""


class ShadowTorusError(Exception):
    """Base class for all package errors."""


class InvalidProfile(ShadowTorusError, ValueError):
    """A perturbation profile violates one of its defining properties."""


class SupportTooLarge(ShadowTorusError, ValueError):
    """The perturbation support does not fit in a fundamental domain."""


class NotDifferentiable(ShadowTorusError, TypeError):
    pass


class NonConvergence(ShadowTorusError, RuntimeError):
    pass


class NotInvertible(ShadowTorusError, ValueError):
    """Displacement field too steep for ``id + field`` to be a homeomorphism."""


class OutOfChart(ShadowTorusError, ValueError):
    pass


class OnCore(ShadowTorusError, ValueError):
    """Retraction requested on the core ``V = 0`` where it is undefined."""


class OutOfRect(ShadowTorusError, ValueError):
    pass


class ChartOverflow(ShadowTorusError, ValueError):
    pass


class EmptySample(ShadowTorusError, ValueError):
    pass


class NoPositiveD(ShadowTorusError, RuntimeError):
    pass


class ChainFailed(ShadowTorusError, RuntimeError):
    def __init__(self, message, condition=None, reports=None):
        super().__init__(message)
        self.condition = condition
        self.reports = reports or []


class Exhausted(ShadowTorusError, RuntimeError):
    """No box chain survives; ``step`` is the transition ``step -> step + 1`` that emptied."""

    def __init__(self, message, step, reason):
        super().__init__(message)
        self.step = step
        self.reason = reason


class ShadowFailed(ShadowTorusError, RuntimeError):
    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class PreconditionRho(ShadowTorusError, ValueError):
    pass


class MissingArtifacts(ShadowTorusError, FileNotFoundError):
    pass


class ConfigError(ShadowTorusError, ValueError):
    """Malformed experiment configuration; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
