"""Exception types shared across the package."""


class GlddError(Exception):
    """Base class for all package errors."""


class NonDivisibleSpacing(GlddError):
    """Requested spacing does not tile the domain extent."""


class OutOfDomain(GlddError):
    """Point lies outside the mesh bounding box."""


class UnsupportedDegree(GlddError):
    """Polynomial degree other than 1 or 2."""


class NonpositiveCoefficient(GlddError):
    """Diffusion coefficient must be strictly positive."""


class ForeignFacet(GlddError):
    """Facet is not part of the mesh boundary."""


class IndexOutOfRange(GlddError, IndexError):
    """Dof index outside the valid range."""


class OrphanInterfaceFacet(GlddError):
    """Interface facet without an adjacent cell."""


class SingularMatrix(GlddError):
    """Direct solve hit a singular or numerically singular matrix."""


class NoConvergence(GlddError):
    """Iterative method exhausted its budget without meeting the tolerance."""

    def __init__(self, msg, estimate=None, iterations=None):
        super().__init__(msg)
        self.estimate = estimate
        self.iterations = iterations


class TooLarge(GlddError):
    """Problem size exceeds the guard for a dense code path."""


class RankDeficient(GlddError):
    """Least-squares system does not determine the requested coefficients."""


class Diverged(GlddError):
    """Fixed-point iteration blew past the divergence guard."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class MaxItersExceeded(GlddError):
    """Fixed-point iteration hit the iteration cap before the tolerance."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class InsufficientRatios(GlddError):
    """Growth study needs at least three mesh ratios."""


class NonpositiveConstant(GlddError):
    """Fitted constant is nonpositive, derived quantity undefined."""


class PicardNoConvergence(GlddError):
    """Outer nonlinear loop exhausted its budget."""

    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = history
