"""Exception hierarchy shared by the simulator modules."""


class NeuroSwarmsError(Exception):
    """Base class for all simulator errors."""


class ParseError(NeuroSwarmsError):
    """Environment file is not well-formed XML or has malformed attributes."""


class UnsupportedGeometry(NeuroSwarmsError):
    """Environment uses geometry outside the supported SVG subset."""


class InvalidEnvironment(NeuroSwarmsError):
    """Environment is parseable but violates a structural requirement."""


class OutsideEnvironment(NeuroSwarmsError):
    """A query point lies outside the environment interior."""


class ContractViolation(NeuroSwarmsError, ValueError):
    """An operation received inputs outside its domain."""


class ConfigError(NeuroSwarmsError, ValueError):
    """Unknown parameter key or invalid parameter value."""


class NumericalDivergence(NeuroSwarmsError):
    """A NaN or Inf appeared in the simulation state."""

    def __init__(self, message, tick=None, record=None):
        super().__init__(message)
        self.tick = tick
        self.record = record


class EmptyRecord(NeuroSwarmsError):
    """A record holds no samples."""
