"""Exception hierarchy shared by every module."""


class LandmarkLocError(Exception):
    """Base class for all errors raised by landmarkloc."""


class GeometryError(LandmarkLocError):
    pass


class DegenerateDepth(GeometryError):
    pass


class NoConvergence(GeometryError):
    pass


class DimensionMismatch(LandmarkLocError, ValueError):
    pass


class EmptyIndex(LandmarkLocError, ValueError):
    pass


class TooFewTrainDescriptors(LandmarkLocError, ValueError):
    pass


class EmptyHistogram(LandmarkLocError, ValueError):
    pass


class InvalidRatio(LandmarkLocError, ValueError):
    pass


class NotEnoughData(LandmarkLocError):
    pass


class NoModelFound(LandmarkLocError):
    pass


class TooFewPoints(LandmarkLocError):
    pass


class DegenerateConfiguration(LandmarkLocError):
    pass


class CheiralityViolation(LandmarkLocError):
    pass


class DegenerateBaseline(LandmarkLocError):
    pass


class SeedDegenerate(LandmarkLocError):
    pass


class RegistrationStalled(LandmarkLocError):
    pass


class SingularNormalEquations(LandmarkLocError):
    def __init__(self, message: str, variable: str | None = None):
        super().__init__(message)
        self.variable = variable


class MissingDescriptor(LandmarkLocError):
    pass


class TooFewPairs(LandmarkLocError):
    pass


class CollinearPoints(LandmarkLocError):
    pass


# evaluation uses the name from its own contract; same failure mode
CollinearDegenerate = CollinearPoints


class UnsupportedCameraModel(LandmarkLocError):
    pass


class EmptyHistory(LandmarkLocError):
    pass


class TooFewObservations(LandmarkLocError):
    pass


class SingularSystem(LandmarkLocError):
    pass


class PackingFailure(LandmarkLocError):
    pass


class ParseError(LandmarkLocError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.path = path
        self.line = line
