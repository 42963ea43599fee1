"""Exception types; each maps onto a CLI exit code."""


class BhlabError(Exception):
    exit_code = 1


class ConfigError(BhlabError, ValueError):
    exit_code = 2


class CapacityError(BhlabError):
    exit_code = 3


class NumericalError(BhlabError):
    exit_code = 4


class EnergyRangeError(NumericalError, ValueError):
    """Requested energy lies outside the attainable classical range."""


class SamplingError(NumericalError):
    """Rejection sampling gave up before collecting enough points."""


class IntegrationError(NumericalError):
    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t
