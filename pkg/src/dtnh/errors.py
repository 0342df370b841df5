"""Exception hierarchy shared across the package."""


class DTNHError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(DTNHError, ValueError):
    """Operand shapes or lengths do not agree."""


class ConfigurationError(DTNHError, ValueError):
    """An experiment, network, or regularizer configuration is invalid."""


class DataError(DTNHError, ValueError):
    """A dataset is empty, malformed, or carries out-of-range labels."""


class ParseError(DataError):
    """A dataset or metrics file could not be parsed.

    ``position`` is a byte offset for binary formats and a 1-based line
    number for text formats.
    """

    def __init__(self, message, path=None, position=None):
        self.path = path
        self.position = position
        where = []
        if path is not None:
            where.append(str(path))
        if position is not None:
            where.append(f"at {position}")
        prefix = f"{' '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class FormatError(DTNHError, ValueError):
    """A checkpoint file is corrupt; ``field`` names the offending section."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"checkpoint {field}: {message}")


class NumericError(DTNHError, ArithmeticError):
    """Non-finite values reached a computation that requires finite input."""


class DegenerateGradientError(NumericError):
    """The empirical-loss gradient is too small to project onto."""


class TrainingDivergedError(NumericError):
    """Training produced a non-finite loss; carries the step diagnostics."""

    def __init__(self, iteration, empirical_loss, norm_gJ, norm_gOmega):
        self.iteration = iteration
        self.empirical_loss = empirical_loss
        self.norm_gJ = norm_gJ
        self.norm_gOmega = norm_gOmega
        super().__init__(
            f"non-finite loss at iteration {iteration}: J={empirical_loss!r}, "
            f"|gJ|={norm_gJ!r}, |gOmega|={norm_gOmega!r}"
        )
