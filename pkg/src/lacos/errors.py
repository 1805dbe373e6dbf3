"""Exception hierarchy shared across the package."""


class LacosError(Exception):
    """Base class for all package errors."""


class ShapeError(LacosError, ValueError):
    pass


class RankError(LacosError, ValueError):
    pass


class NonFiniteError(LacosError, ArithmeticError):
    pass


class DegenerateMaskError(LacosError, ValueError):
    pass


class DomainError(LacosError, ValueError):
    pass


class ZeroNormError(LacosError, ArithmeticError):
    pass


class DegenerateError(LacosError, ValueError):
    """Raised when a statistic is undefined (constant input, too few values)."""


class ConfigError(LacosError, ValueError):
    pass


class DataError(LacosError, ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class CheckpointFormatError(LacosError):
    pass
