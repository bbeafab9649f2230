class RascError(Exception):
    """Base class for errors raised by the hub."""


class ValidationError(RascError, ValueError):
    pass


class ConfigError(RascError, ValueError):
    pass


class UntrainedDistributionError(RascError, ValueError):
    """Raised when a distribution is queried before any sample was observed."""


class InfeasibleBudgetError(RascError, ValueError):
    """Raised when no first poll makes the recurrence land on the upper bound."""


class UnsupportableToleranceError(RascError, ValueError):
    """Raised when the detection tolerance is below the device's min poll interval."""


class DeviceBusyError(RascError):
    pass


class RoutineParseError(RascError, ValueError):
    pass


class MilestoneNotReachedError(RascError):
    pass


class ScheduleConsistencyError(RascError):
    """Raised when executed history contradicts the serialization order."""
