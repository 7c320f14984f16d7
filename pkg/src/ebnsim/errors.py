"""Exception hierarchy shared by all ebnsim modules."""


class EbnsimError(Exception):
    """Base class for every error raised by ebnsim."""


class InvalidChannelError(EbnsimError, ValueError):
    pass


class NegativeDurationError(EbnsimError, ValueError):
    pass


class DegenerateStateError(EbnsimError, ValueError):
    """A density matrix left the physical set by more than the repair tolerance."""


class SchedulingError(EbnsimError, ValueError):
    pass


class ConfigError(EbnsimError, ValueError):
    """Config text failed to parse or validate.

    ``entity`` names the offending node/link/request when one is known.
    """

    def __init__(self, message: str, entity: str | None = None):
        self.entity = entity
        super().__init__(f"{entity}: {message}" if entity else message)


class MissingQubitError(EbnsimError, LookupError):
    pass


class MismatchedAttemptError(EbnsimError, RuntimeError):
    pass


class InsufficientMemoryError(EbnsimError, RuntimeError):
    pass


class NoPathError(EbnsimError, LookupError):
    pass


class InfeasibleError(EbnsimError, ValueError):
    pass


class AdmissionError(EbnsimError, RuntimeError):
    pass


class RequestAborted(EbnsimError, RuntimeError):
    pass


class NoSuccessesError(EbnsimError, ValueError):
    pass


class NoMeasurementsError(EbnsimError, ValueError):
    pass
