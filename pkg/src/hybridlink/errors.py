"""Exception hierarchy shared by the solver modules and the CLI."""


class HybridLinkError(Exception):
    """Base class for all package errors."""


class DomainError(HybridLinkError, ValueError):
    """An input lies outside the mathematical domain of a formula."""


class ConfigError(HybridLinkError, ValueError):
    """A problem or scenario configuration is invalid or infeasible."""


class CombinatorialCapError(ConfigError):
    """Rounding enumeration would exceed its device cap."""


class BudgetExceededError(ConfigError):
    """The exact oracle refuses an instance larger than its budget."""


class DegenerateInputError(HybridLinkError):
    """Every device has numerically zero throughput; nothing to optimize."""

    def __init__(self, message, devices=()):
        super().__init__(message)
        self.devices = tuple(devices)
