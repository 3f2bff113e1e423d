"""Exception hierarchy shared by all modules."""


class EvoError(Exception):
    """Base class for every error raised by :mod:`evohom`."""


class GridMismatch(EvoError):
    """Two objects live on different time grids or spatial models."""


class ConfigInvalid(EvoError):
    """A configuration object or constructor argument is invalid."""


class NegativeDelay(EvoError):
    pass


class AlphaOutOfRange(EvoError):
    pass


class UnboundedKind(EvoError):
    """A norm was requested for an operator kind without a bounded norm."""


class UnsupportedKind(EvoError):
    pass


class NotCoercive(EvoError):
    pass


class NotCoerciveOnCell(NotCoercive):
    pass


class SingularStep(EvoError):
    pass


class SingularAlgebraicBlock(NotCoercive):
    pass


class NotContractive(EvoError):
    """The Neumann iteration would not contract; increase the weight nu.

    Parameters
    ----------
    q : float
        Certified upper bound of the contraction factor (``q >= 1``).
    """

    def __init__(self, q, message=None):
        self.q = float(q)
        super().__init__(message or f"contraction factor q={self.q:.6g} >= 1; increase nu")


class NotContractiveAtFrequency(NotContractive):
    def __init__(self, k, q):
        self.k = int(k)
        super().__init__(q, f"series does not contract at frequency index {k} (q={q:.6g})")


class ScheduleTooShort(EvoError):
    pass


class NotTranslationInvariant(EvoError):
    pass


class EtaOnSpectrum(EvoError):
    pass


class ScenarioUnknown(EvoError):
    pass


class Aborted(EvoError):
    def __init__(self, reason):
        self.reason = reason
        super().__init__(str(reason))


class NoKernelAvailable(EvoError):
    pass


class DeserializationError(EvoError):
    """A file could not be parsed; the message carries the offending path."""
