"""Exception hierarchy shared by all modules."""


class NormShiftError(Exception):
    """Base class for every error raised by this package."""


class ExprSyntaxError(NormShiftError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifierError(NormShiftError):
    def __init__(self, name, offset):
        super().__init__(f"unknown identifier {name!r} at offset {offset}")
        self.name = name
        self.offset = offset


class DomainError(NormShiftError):
    """Evaluation left the mathematical domain of an operation."""

    def __init__(self, message, subexpression=None):
        if subexpression is not None:
            message = f"{message} in '{subexpression}'"
        super().__init__(message)
        self.subexpression = subexpression


class OutOfDomainError(NormShiftError):
    """A point lies outside the chart box (or outside the admissible v range)."""


class SingularMetricError(NormShiftError):
    pass


class RegularityError(NormShiftError):
    """The generating function has W_v == 0 somewhere it is needed."""


class GaugeError(NormShiftError):
    pass


class ZeroVelocityError(NormShiftError):
    pass


class TransversalityError(NormShiftError):
    """The last covector component vanishes, so the affine chart breaks down."""


class IncompatibleSectionError(NormShiftError):
    """A section fails the closedness (compatibility) equations."""


class NotClosedError(NormShiftError):
    pass


class PfaffEscapeError(NormShiftError):
    """The Pfaff solution left the positive half-line in v."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class InversionError(NormShiftError):
    pass


class BracketError(NormShiftError):
    pass


class RankDeficiencyError(NormShiftError):
    pass


class ConfigError(NormShiftError):
    pass


class VanishingNormalizationError(NormShiftError):
    """The normalizing scalar ``a`` vanishes, so ``1/a`` is no integrating factor."""


class StepSizeUnderflowError(NormShiftError):
    pass
