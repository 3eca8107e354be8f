"""Exception types raised across the toolkit."""


class HomogError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1

    def to_dict(self):
        return {"error": type(self).__name__, "message": str(self)}


class InvalidResolution(HomogError, ValueError):
    pass


class SolidTouchesBoundary(HomogError, ValueError):
    pass


class ContrastViolation(HomogError, ValueError):
    pass


class InconsistentConstraints(HomogError, ValueError):
    pass


class NoConvergence(HomogError, RuntimeError):
    exit_code = 3

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations

    def to_dict(self):
        out = super().to_dict()
        out["residual"] = self.residual
        out["iterations"] = self.iterations
        return out


class FormulaMismatch(HomogError, RuntimeError):
    pass


class IncompatibleFlux(HomogError, ValueError):
    pass


class NotSPD(HomogError, ValueError):
    pass


class UnderResolved(HomogError, ValueError):
    pass


class ConfigError(HomogError, ValueError):
    exit_code = 2


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError):
    pass
