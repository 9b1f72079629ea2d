"""Exception types shared across the package."""


class ThermoError(Exception):
    """Base class for all package errors."""


class MalformedCsv(ThermoError, ValueError):
    pass


class NonMonotonicTime(ThermoError, ValueError):
    pass


class TooShort(ThermoError, ValueError):
    pass


class DegenerateNode(ThermoError, ValueError):
    pass


class Unstable(ThermoError, ArithmeticError):
    pass


class NonFinite(ThermoError, ArithmeticError):
    pass


class AllDegenerate(ThermoError, ValueError):
    pass


class DimensionMismatch(ThermoError, ValueError):
    pass


class ShapeMismatch(ThermoError, ValueError):
    pass


class NonScalarLoss(ThermoError, ValueError):
    pass


class HeadsDivisibility(ThermoError, ValueError):
    pass


class NonFiniteGradient(ThermoError, ArithmeticError):
    pass


class Diverged(ThermoError, ArithmeticError):
    pass


class UnmappedNode(ThermoError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class EmptyReport(ThermoError, ValueError):
    pass


class ConfigError(ThermoError, ValueError):
    pass
