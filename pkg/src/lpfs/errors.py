"""Exception hierarchy. Each class carries the CLI exit code it maps to."""

from __future__ import annotations


class LPFSError(Exception):
    exit_code = 2


class ScenarioError(LPFSError, ValueError):
    """Malformed input, dimension mismatch or incompatible files."""

    exit_code = 1


class NumericalError(LPFSError, ArithmeticError):
    exit_code = 2


class ConvergenceError(NumericalError):
    """Iteration failed to converge; ``trace`` holds the per-iteration residuals."""

    def __init__(self, message: str, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class RiccatiBlowUpError(NumericalError):
    pass


class BorderlineError(LPFSError):
    """A multiplier sits in the band around the unit circle that we refuse to decide."""

    exit_code = 3


class NotStabilizableError(LPFSError):
    exit_code = 4

    def __init__(self, message: str, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class UndecidableError(LPFSError):
    """Certificates disagree or a margin falls within a factor 10 of its tolerance."""

    exit_code = 5

    def __init__(self, message: str, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class VerificationError(LPFSError):
    exit_code = 6
