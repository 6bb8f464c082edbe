"""Exception hierarchy shared across the package.

Every error raised by seqgrad derives from :class:`SeqgradError`, so callers
can catch one base class. Configuration problems (bad files, bad values,
unknown keys) derive from :class:`ConfigError` and map to CLI exit code 2;
everything else maps to exit code 3.
"""


class SeqgradError(Exception):
    """Base class for all errors raised by this package."""


class UnknownSymbol(SeqgradError):
    """A sequence character is not part of the alphabet."""

    def __init__(self, position: int, char: str):
        self.position = position
        self.char = char
        super().__init__(f"unknown symbol {char!r} at position {position}")


class DimensionMismatch(SeqgradError):
    """Array shapes are inconsistent with what the operation expects."""


class NonFiniteInput(SeqgradError):
    """Input contains NaN or infinite entries."""


class InvalidDistribution(SeqgradError):
    """A probability vector has negative mass or does not sum to one."""


class DegenerateInput(SeqgradError):
    """Input is too small for the requested statistic (e.g. N < 2)."""


class TooLarge(SeqgradError):
    """Exhaustive enumeration was requested for an infeasible search space."""


class UnknownLayer(SeqgradError):
    """An activity penalty references a layer the oracle does not track."""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"oracle reports no activation named {name!r}")


class IoError(SeqgradError):
    """A file could not be read or written."""

    def __init__(self, path, reason: str = ""):
        self.path = str(path)
        msg = f"I/O failure on {self.path}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class ConfigError(SeqgradError):
    """Base class for configuration and input-file problems (exit code 2)."""


class ParseError(ConfigError):
    """A config or weight file is not syntactically valid."""

    def __init__(self, where: str, reason: str):
        self.where = where
        self.reason = reason
        super().__init__(f"parse error in {where}: {reason}")


class ShapeError(ConfigError):
    """A weight file declares shapes that do not match its payload."""

    def __init__(self, expected, got):
        self.expected = expected
        self.got = got
        super().__init__(f"shape mismatch: expected {expected}, got {got}")


class ValidationError(ConfigError):
    """A config field holds a value outside its documented range."""

    def __init__(self, field: str, reason: str):
        self.field = field
        self.reason = reason
        super().__init__(f"invalid config field {field!r}: {reason}")


class UnknownKey(ConfigError):
    """A config document contains a key the schema does not define."""

    def __init__(self, path: str):
        self.path = path
        super().__init__(f"unknown config key {path!r}")


class NumericUnderflow(RuntimeWarning):
    """Signaled when a survival probability underflows below 1e-300.

    The objective value is capped and the gradient switches to the
    log-domain asymptotic, so optimization keeps a usable direction.
    """
