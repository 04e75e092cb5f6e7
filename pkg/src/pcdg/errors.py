"""Exception hierarchy.

Geometry failures carry the index of the offending triangle (``None`` when
not applicable) so drivers can report it.
"""


class PcdgError(Exception):
    """Base class for all errors raised by this package."""


class GeometryError(PcdgError):
    def __init__(self, message, triangle=None):
        if triangle is not None:
            message = f"{message} (triangle {triangle})"
        super().__init__(message)
        self.triangle = triangle


class DegenerateTriangle(GeometryError):
    pass


class RankDeficientFit(GeometryError):
    pass


class InsufficientPoints(GeometryError):
    pass


class NewtonDiverged(GeometryError):
    pass


class SingularMetric(GeometryError):
    pass


class MeshError(PcdgError):
    """Raised for invalid mesh input."""


class NonManifoldMesh(MeshError):
    pass


class OpenSurface(MeshError):
    pass


class InvertedOrientation(MeshError):
    pass


class NonConformingEdge(MeshError):
    pass


class ShapeRegularityError(MeshError):
    pass


class SolverError(PcdgError):
    pass


class NotPositiveDefinite(SolverError):
    pass


class SolverStagnation(SolverError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class MultiplicityMismatch(PcdgError):
    pass
