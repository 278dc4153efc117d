"""Exception hierarchy shared across the simulator."""


class SimulationError(Exception):
    """Base class for every error raised by the package."""


class InvalidStateError(SimulationError, ValueError):
    pass


class UnknownCoreError(SimulationError, KeyError):
    pass


class DimensionError(SimulationError, ValueError):
    pass


class ExtremaOrderError(SimulationError, ValueError):
    """Fringe maximum below fringe minimum."""


class ParameterError(SimulationError, ValueError):
    pass


class UndefinedPhaseErrorError(SimulationError, ValueError):
    """No single-photon events to estimate a phase error from."""


class ProgressStallError(SimulationError, RuntimeError):
    """A block-size target cannot be reached because detection rates vanish."""


class ConfigError(SimulationError, ValueError):
    pass
