"""Exception types shared across the package."""


class MaxrankError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MaxrankError):
    """Invalid configuration (grid sizes, operator choice, CLI arguments)."""


class SamplingError(MaxrankError):
    """A sampled value was unusable (non-finite function value, bad pivot)."""


class ContractError(MaxrankError):
    """An operation was called outside its documented domain."""


class SolveError(MaxrankError):
    """The linearized system could not be solved (degenerate linearization)."""


class InitialGuessError(MaxrankError):
    """No admissible starting field could be constructed."""
