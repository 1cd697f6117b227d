"""Exception types raised across the library.

Every error is a subclass of MVLabError so callers can catch the whole
family; the CLI maps them to nonzero exit codes.
"""

from __future__ import annotations


class MVLabError(Exception):
    """Base class for all mvlab errors."""


# ---- linear algebra ----

class NotSymmetricError(MVLabError):
    pass


class NegativeEigenvalueError(MVLabError):
    def __init__(self, lambda_min: float):
        super().__init__(f"smallest eigenvalue {lambda_min:.3e} below tolerance")
        self.lambda_min = lambda_min


class EllipticityViolatedError(MVLabError):
    pass


class QuadratureNotConvergedError(MVLabError):
    pass


class SingularGramianError(MVLabError):
    def __init__(self, t: float):
        super().__init__(f"Gramian at t={t} is numerically singular")
        self.t = t


# ---- measures ----

class SizeMismatchError(MVLabError):
    pass


class UnsupportedWeightsError(MVLabError):
    pass


class SingularCovarianceError(MVLabError):
    pass


class DegenerateSampleError(MVLabError):
    pass


class TooFewParticlesError(MVLabError):
    pass


# ---- simulation ----

class NonFiniteStateError(MVLabError):
    def __init__(self, step: int):
        super().__init__(f"non-finite state at step {step}")
        self.step = step


class StreamMismatchError(MVLabError):
    pass


class FlowHorizonTooShortError(MVLabError):
    pass


class LengthMismatchError(MVLabError):
    pass


class GridMismatchError(MVLabError):
    pass


# ---- experiments ----

class NotConvergedError(MVLabError):
    pass


class ParameterOutOfRangeError(MVLabError):
    pass


class ConfigInvalidError(MVLabError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"invalid config field {field!r}: {reason}")
        self.field = field


class ExperimentFailedError(MVLabError):
    def __init__(self, check: str):
        super().__init__(f"check failed: {check}")
        self.check = check
