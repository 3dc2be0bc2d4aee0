"""Exception hierarchy shared by all texdown modules."""


class TexdownError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(TexdownError, ValueError):
    pass


class ConfigError(TexdownError, ValueError):
    pass


class NumericError(TexdownError, FloatingPointError):
    pass


class GraphError(TexdownError, IndexError):
    pass


class OptError(TexdownError, RuntimeError):
    pass


class MeshError(TexdownError, ValueError):
    pass


class ParseError(TexdownError, ValueError):
    """Malformed input line. ``lineno`` is 1-based."""

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class FormatError(ParseError):
    """Input is well-formed but not in the subset this package accepts."""


class DegenerateError(TexdownError, ValueError):
    pass


class WindowError(TexdownError, ValueError):
    pass


class NumericAbort(TexdownError, RuntimeError):
    """Training produced a non-finite loss; ``diagnostic`` holds the last pose batch."""

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}
