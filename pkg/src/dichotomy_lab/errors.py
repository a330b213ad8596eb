"""Typed errors. Each family carries its own CLI exit code."""

from __future__ import annotations


class LabError(Exception):
    """Base class for every error raised by the package."""

    exit_code = 1


class ConfigError(LabError):
    exit_code = 2

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


# growth rates
class GrowthError(LabError):
    exit_code = 3


class InvalidRate(GrowthError):
    pass


class DomainError(GrowthError):
    pass


class HorizonExceeded(GrowthError):
    pass


# driving systems
class DriverError(LabError):
    exit_code = 4


class NegativeTime(DriverError):
    pass


class WindowExceeded(DriverError):
    pass


# cocycles
class CocycleError(LabError):
    exit_code = 5


class SingularRestriction(CocycleError):
    pass


class InvalidProjection(CocycleError):
    pass


# dichotomy fitting and the converse direction
class DichotomyError(LabError):
    exit_code = 6


class NoContraction(DichotomyError):
    pass


class AmbiguousGap(DichotomyError):
    pass


class HypothesisViolated(DichotomyError):
    pass


class SplittingHorizonInsufficient(DichotomyError):
    pass


# admissibility
class AdmissibilityError(LabError):
    exit_code = 7


class CertificateRequired(AdmissibilityError):
    pass


class TailNotConvergent(AdmissibilityError):
    pass


# robustness
class RobustnessError(LabError):
    exit_code = 8


class NotContracting(RobustnessError):
    pass


class MaxIterExceeded(RobustnessError):
    pass


# adapted norms
class NormError(LabError):
    exit_code = 9


class HorizonInsufficient(NormError):
    pass


class SandwichViolated(NormError):
    pass
