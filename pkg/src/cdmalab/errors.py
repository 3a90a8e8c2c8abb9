"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument is outside the domain an operation is defined on."""


class CapacityError(ValueError):
    """An exhaustive computation would exceed its enumeration budget."""


class InfeasibleSpecError(ValueError):
    """The requested ensemble parameters admit no valid code."""


class SamplingFailureError(RuntimeError):
    """Repeated stub re-pairing failed to produce a simple bipartite graph."""


class ConfigError(ValueError):
    """An experiment configuration failed validation.

    `fields` lists the offending field names.
    """

    def __init__(self, message, fields=()):
        super().__init__(message)
        self.fields = tuple(fields)
