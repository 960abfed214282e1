"""Exception hierarchy shared by all modules."""


class SKTError(Exception):
    """Base class for every error raised by this package."""


class InputError(SKTError, ValueError):
    """Invalid arguments: dimension mismatch, out-of-range parameters."""


class DivergenceError(SKTError):
    """Newton iteration did not converge.

    The last iterate is kept on ``last_iterate`` so callers can inspect it.
    """

    def __init__(self, message, last_iterate=None, residual_norm=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual_norm = residual_norm


class SingularityError(SKTError):
    """A linear solve hit a numerically singular matrix.

    Inside a continuation run this usually means the state sits on (or very
    near) a bifurcation point.
    """

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class SpectralError(SKTError):
    """Eigenvalue iteration failed or returned pairs that miss the residual bound."""


class StallError(SKTError):
    """Continuation step size underflowed; ``branch`` holds the partial result."""

    def __init__(self, message, branch=None):
        super().__init__(message)
        self.branch = branch


class NoSwitchError(SKTError):
    """Branch switching failed to leave the parent branch."""


class WrongClassError(SKTError):
    """A limiting profile converged to the wrong nodal class."""

    def __init__(self, message, profile=None):
        super().__init__(message)
        self.profile = profile


class DecompositionError(SKTError):
    """Full limiting spectrum does not match the decoupled spectra."""


class BlowUpError(SKTError):
    """Time integration left the admissible range; ``trajectory`` is partial."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class EstimationError(SKTError):
    """Not enough samples to estimate a growth rate."""


class UndefinedMeasureError(SKTError):
    """Overlap ratio requested for the zero state."""


class ConfigError(SKTError):
    """Malformed or out-of-range run configuration."""


class ParseError(SKTError):
    """Malformed snapshot or data file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
