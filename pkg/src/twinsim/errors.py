"""Exception hierarchy shared by all modules."""


class TwinSimError(Exception):
    """Base class for errors raised by twinsim."""


class DomainError(TwinSimError, ValueError):
    """An argument lies outside the domain of an operation."""


class ContractError(TwinSimError):
    """An internal precondition (shape, symmetry) does not hold."""


class PhysicalityError(TwinSimError):
    """A state or channel violates the uncertainty principle."""


class ConfigError(TwinSimError, ValueError):
    """Invalid experiment configuration."""


class MeasurementError(TwinSimError):
    """A detection cannot be evaluated, e.g. no light on the detector."""


class NoDipError(TwinSimError):
    """A noise trace has no dip below its baseline."""


class FitError(TwinSimError):
    """A least-squares fit did not converge; ``best`` holds the last iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
