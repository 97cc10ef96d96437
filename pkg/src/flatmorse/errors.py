"""Exception hierarchy shared by all stages."""

__all__ = [
    "FlatMorseError",
    "DegenerateLattice",
    "InvalidHandle",
    "InvalidMesh",
    "TooCoarse",
    "ExtractionFailed",
    "NotConverged",
    "NotOrientable",
    "DegenerateNeighborhood",
    "DegenerateTriangle",
    "ShapeMismatch",
    "SolverStalled",
    "IndexAmbiguous",
    "BettiAmbiguous",
    "TopologyMismatch",
    "KernelAmbiguous",
    "DegenerateTestSet",
    "UsageError",
    "StageError",
]


class FlatMorseError(Exception):
    """Base class for every error raised by this package."""


class DegenerateLattice(FlatMorseError):
    pass


class InvalidHandle(FlatMorseError, KeyError):
    pass


class InvalidMesh(FlatMorseError):
    pass


class TooCoarse(FlatMorseError, ValueError):
    pass


class ExtractionFailed(FlatMorseError):
    pass


class NotConverged(FlatMorseError):
    """Flow stopped at the iteration cap; carries the best iterate."""

    def __init__(self, message, mesh=None, trace=None):
        super().__init__(message)
        self.mesh = mesh
        self.trace = trace


class NotOrientable(FlatMorseError):
    pass


class DegenerateNeighborhood(FlatMorseError):
    pass


class DegenerateTriangle(FlatMorseError):
    pass


class ShapeMismatch(FlatMorseError, ValueError):
    pass


class SolverStalled(FlatMorseError):
    def __init__(self, message, eigenvalues=None, residuals=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues
        self.residuals = residuals


class IndexAmbiguous(FlatMorseError):
    def __init__(self, message, candidates=()):
        super().__init__(message)
        self.candidates = tuple(candidates)


class BettiAmbiguous(FlatMorseError):
    pass


class TopologyMismatch(FlatMorseError):
    pass


class KernelAmbiguous(FlatMorseError):
    pass


class DegenerateTestSet(FlatMorseError):
    pass


class UsageError(FlatMorseError):
    pass


class StageError(FlatMorseError):
    """A pipeline failure tagged with the stage it happened in."""

    def __init__(self, stage, cause, report=None):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
        self.report = report
