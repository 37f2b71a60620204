"""Exception hierarchy shared by every module."""

from __future__ import annotations


class QcaLabError(Exception):
    """Base class for all library errors."""


class ConfigError(QcaLabError):
    """Malformed experiment configuration."""


class DimensionCap(QcaLabError):
    """A dense object would exceed the configured size cap."""


class NumericalFailure(QcaLabError):
    """A numerical hypothesis was violated during a construction."""


class RegionMismatch(QcaLabError):
    pass


class ZeroOperator(QcaLabError):
    pass


class SpecMismatch(QcaLabError):
    pass


class OpenChainUnsupported(QcaLabError):
    pass


class OverlapInLayer(QcaLabError):
    pass


class WindowTooLarge(QcaLabError):
    pass


class DegenerateSpectrum(NumericalFailure):
    pass


class NotAnAutomorphism(NumericalFailure):
    pass


class EpsilonTooLarge(NumericalFailure):
    pass


class SingularY(NumericalFailure):
    pass


class SpectralGapFailure(NumericalFailure):
    pass


class FactorizationFailure(NumericalFailure):
    pass


class LogBranchFailure(NumericalFailure):
    pass


class Divergent(NumericalFailure):
    pass


class NonzeroIndex(QcaLabError):
    def __init__(self, message: str, index: float | None = None):
        super().__init__(message)
        self.index = index


class IndexMismatch(QcaLabError):
    pass
