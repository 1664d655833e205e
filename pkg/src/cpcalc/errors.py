"""Exception types raised by the library.

Every failure mode carries enough context (point, band offset, step index)
to locate the offending input without re-running under a debugger.
"""


class CpcalcError(Exception):
    """Base class for all library errors."""


class DegenerateGradient(CpcalcError):
    """A level-set gradient vanished where the construction needs it."""


class DegenerateTangentialGradient(DegenerateGradient):
    """The projected gradient driving an intrinsic retraction vanished."""


class RankDeficient(CpcalcError):
    """Normal vectors are (numerically) linearly dependent."""


class OffSurface(CpcalcError):
    """A point expected on the surface has too large a level-set residual."""


class OffSurfaceStart(OffSurface):
    """An intrinsic retraction was started from a point off its base surface."""


class OnAxis(CpcalcError):
    """Point lies on the symmetry axis where the closed form is undefined."""


class NoConvergence(CpcalcError):
    """An iterative procedure failed to reach its tolerance."""


class StepLimitExceeded(NoConvergence):
    """The adaptive ODE integrator hit its step budget."""


class QuadratureNoConvergence(NoConvergence):
    """A quadrature rule did not reach the requested accuracy."""


class EmptyBand(CpcalcError):
    """No grid node satisfies the band inequality."""


class StencilStarvation(CpcalcError):
    """A point needed by the solver has no complete stencil (band too thin)."""


class StencilOutOfBand(CpcalcError):
    """An interpolation or difference stencil leaves the banded grid."""


class InterpStencilOutOfBand(StencilOutOfBand):
    """A re-extension interpolation stencil leaves the valid region."""


class NaNDetected(CpcalcError):
    """A non-finite value appeared in an evolving grid field."""
