"""Exception types shared across the laboratory modules."""


class LabError(Exception):
    """Base class for all laboratory errors."""


class EllipticityViolation(LabError):
    """Sampled Rayleigh quotient left the admissible band [mu, 1/mu]."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class WindowTooSmall(LabError):
    """Averaging window covers fewer nodes than the trusted minimum."""


class NonIntegerDivision(LabError):
    """Domain extent is not an integer multiple of the requested step."""


class SolverDivergence(LabError):
    """Linear solve failed to reach the required relative residual."""


class UnresolvedOscillation(LabError):
    """Grid too coarse for the fastest oscillation of the coefficients."""


class BurnInNotConverged(LabError):
    """Long-time corrector march did not settle within the burn-in window."""


class MeanNotZero(LabError):
    """A quantity that must average to zero over the window does not."""


class KernelUnresolved(LabError):
    """Mollifier width too small for the grid spacing."""


class CollarTooThin(LabError):
    """Cutoff collar width must exceed the smoothing radius."""


class ScaleMismatch(LabError):
    """Corrector scale and oscillation scale disagree."""


class PoleTooCloseToBoundary(LabError):
    """Fundamental-solution pole sits inside the boundary collar."""


class ConfigInvalid(LabError):
    """Experiment configuration failed schema or semantic validation."""
