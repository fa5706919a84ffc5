"""Exception types shared by the toda modules."""


class TodaError(Exception):
    """Base class for all library errors."""


class ZeroLambda(TodaError):
    pass


class RealityViolation(TodaError):
    pass


class GridTooSmall(TodaError):
    pass


class NoConvergence(TodaError):
    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class Blowup(TodaError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ResidualTooLarge(TodaError):
    pass


class NonUnitDeterminant(TodaError):
    pass


class ImaginaryResidue(TodaError):
    pass


class SingularCell(TodaError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class EmptySearch(TodaError):
    pass


class UnsupportedRepresentation(TodaError):
    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = list(indices)


class ConfigError(TodaError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
