"""Exceptions raised by cellfree_fl."""


class CellFreeFLError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(CellFreeFLError, ValueError):
    """The simulation configuration is invalid.

    Parameters
    ----------
    errors : list of str
        One diagnostic per violated rule. Each names its dotted key.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class NumericalError(CellFreeFLError, ArithmeticError):
    """A numerical routine could not produce a usable result."""


class ThetaOverflow(NumericalError, OverflowError):
    """The SINR target ``2**(eta * b / B_tau) - 1`` exceeds the exponent cap."""


class IterationCapExceeded(NumericalError):
    """A fixed-point iteration hit its cap without converging."""


class DegenerateProblem(NumericalError):
    """A power-control problem admits no positive rate-per-bit bracket."""


class NonFiniteGradient(NumericalError):
    """A local gradient contains ``nan`` or ``inf`` entries."""


class ZeroRate(NumericalError):
    """A user has zero uplink rate, so its latency is unbounded."""


class RoundError(NumericalError):
    """A global round failed.

    Parameters
    ----------
    t : int
        Index of the failing round.
    message : str
        Description of the failure.
    """

    def __init__(self, t, message):
        self.t = t
        super().__init__(f"round {t}: {message}")


class MalformedPayload(CellFreeFLError, ValueError):
    """An encoded update is internally inconsistent."""


class TooFewSamples(CellFreeFLError, ValueError):
    """A dataset cannot be split among the requested number of users."""


class DimensionMismatch(CellFreeFLError, ValueError):
    """Vectors that must share a dimension do not."""
