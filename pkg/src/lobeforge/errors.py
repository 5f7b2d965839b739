"""Exception hierarchy shared by all lobeforge modules."""


class LobeforgeError(Exception):
    """Base class for every error raised by lobeforge."""


# geometry
class ProjectionMiss(LobeforgeError, ValueError):
    pass


class InvalidCurvature(LobeforgeError, ValueError):
    pass


class InvalidContour(LobeforgeError, ValueError):
    pass


class QualityFailure(LobeforgeError):
    pass


class MissingTags(LobeforgeError, KeyError):
    pass


class SelfIntersection(LobeforgeError):
    pass


# material / shell
class EmptyDatasheet(LobeforgeError, ValueError):
    pass


class DegenerateElement(LobeforgeError, ValueError):
    pass


# solver
class NonConvergence(LobeforgeError):
    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class EigenIterationFailure(LobeforgeError):
    pass


class DegenerateHinge(LobeforgeError, ValueError):
    pass


class InvalidConstraints(LobeforgeError, ValueError):
    pass


# protocol
class NoTransition(LobeforgeError):
    pass


class RangeError(LobeforgeError, ValueError):
    pass


# analysis
class FormatError(LobeforgeError, ValueError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


class NonMonotoneStroke(FormatError):
    pass


class SampleTooSmall(LobeforgeError, ValueError):
    pass


class DegenerateDesign(LobeforgeError, ValueError):
    pass


class EmptyData(LobeforgeError, ValueError):
    pass


# cli
class ConfigError(LobeforgeError, ValueError):
    pass
