"""Exception hierarchy shared by every module of the toolkit."""


class GeometryError(Exception):
    """Base class for all toolkit errors."""


class DegenerateMetric(GeometryError):
    """The metric is not positive definite at the requested point."""


class SingularVerticalFrame(GeometryError):
    """The vertical frame has a (numerically) singular Gram matrix."""


class NotHorizontal(GeometryError):
    """A vector that must be horizontal has a non-negligible vertical part."""


class NotOrthonormal(GeometryError):
    pass


class OutsideDomain(GeometryError):
    """A point lies outside the chart box."""


class LeftDomain(GeometryError):
    """An integrated curve exited the chart box."""

    def __init__(self, t_exit, message=None):
        self.t_exit = float(t_exit)
        super().__init__(message or f"trajectory left the chart domain at t={self.t_exit:.6g}")


class StepFailure(GeometryError):
    """The adaptive integrator step size underflowed."""


class NoConvergence(GeometryError):
    def __init__(self, max_iter, residual=float("nan"), message=None):
        self.max_iter = max_iter
        self.residual = residual
        super().__init__(message or f"Newton shooting did not converge in {max_iter} iterations "
                                    f"(residual {residual:.3e})")


class SingularBVP(GeometryError):
    """The focal matrix is numerically singular at the boundary time."""


class DivisionNearZero(GeometryError):
    pass


class QuadratureUnderresolved(GeometryError):
    pass


class EigensolveFailure(GeometryError):
    pass


class BadDimensions(GeometryError):
    pass


class UnknownModel(GeometryError):
    pass


class BadParameters(GeometryError):
    pass


class ConfigError(GeometryError):
    """Malformed or inconsistent experiment configuration."""
