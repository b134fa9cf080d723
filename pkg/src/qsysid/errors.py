"""Exception types raised by qsysid."""


class QSysIdError(Exception):
    """Base class for all qsysid errors."""


class DimensionMismatch(QSysIdError, ValueError):
    pass


class NotHurwitz(QSysIdError, ValueError):
    pass


class SingularNoise(QSysIdError, ValueError):
    pass


class NoStabilizingSolution(QSysIdError, ArithmeticError):
    pass


class Blowup(QSysIdError, ArithmeticError):
    pass


class NotSkew(QSysIdError, ValueError):
    pass


class SingularZ(QSysIdError, ValueError):
    pass


class SingularV(QSysIdError, ValueError):
    pass


class EmptyKappas(QSysIdError, ValueError):
    pass


class NonPositiveDuration(QSysIdError, ValueError):
    pass


class InsufficientData(QSysIdError, ValueError):
    pass


class UnstableEstimate(QSysIdError, ArithmeticError):
    """Identified drift matrix is not Hurwitz.

    The offending estimate is attached as ``estimate`` so callers can
    inspect it.
    """

    def __init__(self, msg, estimate=None):
        super().__init__(msg)
        self.estimate = estimate


class LogUndefined(QSysIdError, ArithmeticError):
    pass


class NumericalStall(QSysIdError, ArithmeticError):
    pass


class NoFeasiblePointFound(QSysIdError, ArithmeticError):
    pass


class ZSingularOnPath(QSysIdError, ArithmeticError):
    pass


class DegenerateN(QSysIdError, ValueError):
    pass


class ZeroVarianceChannel(QSysIdError, ValueError):
    pass


class ConfigError(QSysIdError, ValueError):
    pass


class MissingArtifacts(QSysIdError, FileNotFoundError):
    pass
