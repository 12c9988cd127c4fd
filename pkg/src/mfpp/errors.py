"""Exception types shared across the package."""


class MfppError(Exception):
    """Base class for errors raised by this package."""


class InvalidConfigError(MfppError, ValueError):
    """A parameter object or argument violates its documented constraints."""


class ProtocolError(MfppError, RuntimeError):
    """Malformed or inconsistent data on the predictor wire protocol."""


class TransportError(MfppError, RuntimeError):
    """Predictor endpoint unreachable or failing after retries."""


class ExplainJobError(MfppError, RuntimeError):
    """An explanation job aborted; carries context about the failing step."""
