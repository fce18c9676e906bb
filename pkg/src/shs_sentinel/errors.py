"""Exception hierarchy.

``ValidationError`` subclasses signal bad user input (exit code 1 from the
CLI); everything else deriving from ``SentinelError`` is a runtime failure.
"""


class SentinelError(Exception):
    pass


class ValidationError(SentinelError, ValueError):
    pass


class GridFormatError(ValidationError):
    """Malformed grid file. Carries the offending line number when known."""

    def __init__(self, message, lineno=None, path=None):
        self.lineno = lineno
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}:"
        if lineno is not None:
            where += f"{lineno}: "
        elif where:
            where += " "
        super().__init__(where + message)


class GridValidationError(ValidationError):
    pass


class TopologyError(SentinelError):
    def __init__(self, message, component=()):
        self.component = tuple(component)
        super().__init__(message)


class SingularReductionError(SentinelError):
    pass


class ScenarioError(ValidationError):
    pass


class PlacementError(SentinelError):
    pass


class SimulationError(SentinelError):
    pass


class DimensionError(ValidationError):
    pass
