"""Exception hierarchy shared by all dicekit modules."""


class DiceError(Exception):
    """Base class for every error raised by dicekit."""


class InvalidDimensionError(DiceError, ValueError):
    pass


class ShapeError(DiceError, ValueError):
    pass


class InvariantError(DiceError, ValueError):
    pass


class InvalidPermutationError(DiceError, ValueError):
    pass


class InvalidTransitionError(DiceError, ValueError):
    pass


class InfiniteMassError(DiceError, ValueError):
    """A coordination measure violates the integrability condition."""


class UndefinedIntegralError(DiceError, ValueError):
    """A monomial integral diverges (pure-diagonal exponent on an infinite measure)."""


class DualityPreconditionError(DiceError, ValueError):
    """Balanced rates or doubly stochastic support is missing."""


class UnsupportedMeasureError(DiceError, TypeError):
    pass


class ResourceLimitError(DiceError, RuntimeError):
    pass


class NonLumpableError(DiceError, ValueError):
    pass


class PreconditionError(DiceError, ValueError):
    pass


class RngError(DiceError, TypeError):
    pass


class ConfigError(DiceError, ValueError):
    """Configuration document failed validation.

    ``path`` points at the offending key, e.g. ``measure.atoms[1].weight``.
    """

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)
