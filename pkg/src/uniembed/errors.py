"""Exception types shared across the engine."""


class EngineError(Exception):
    """A domain contract was violated: bad data, mismatched dims, degenerate input."""


class FormatError(EngineError):
    """A byte stream does not conform to one of the engine's file layouts."""
