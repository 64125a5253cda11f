"""Exception types shared across the package."""


class PhotonPaintError(Exception):
    """Base class for all package errors."""


class ConfigError(PhotonPaintError):
    """Bad or inconsistent run configuration."""


class PhysicsValidityError(PhotonPaintError):
    """A simulation left its domain of validity (cutoffs, reachability)."""


class CutoffError(PhysicsValidityError):
    """Truncated basis too small: leakage above tolerance."""


class UnreachableTargetError(PhysicsValidityError):
    """Target has weight on a component absent from the initial state."""


class QuadratureError(PhotonPaintError):
    """Adaptive quadrature or step refinement failed to converge."""
