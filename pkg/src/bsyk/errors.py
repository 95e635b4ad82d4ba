"""Exception and warning types shared across the package."""


class BsykError(Exception):
    """Base class for all package errors."""


class InconsistentSector(BsykError):
    """Sector key cannot be realized with the requested active modes."""


class InactiveMode(BsykError):
    """An operator term references a mode outside the basis' active set."""


class SectorMismatch(BsykError):
    """A vector or operator leaves the sector it was declared to live in."""


class DimensionOverflow(BsykError):
    """A requested basis exceeds the configured dimension cap."""


class DenseCapExceeded(DimensionOverflow):
    """The full symmetric space is too large for a dense check."""


class UnsupportedFrame(BsykError):
    """Requested mode frame is not one of the supported choices."""


class NonFiniteAmplitude(BsykError):
    """Propagation produced non-finite amplitudes (tolerance/conditioning failure)."""


class NoKernelComponent(BsykError):
    """Seed vector has no component in the kernel of the generator."""


class WindowOutOfRange(BsykError):
    """Fit window does not overlap the series' time grid."""


class LogDomain(BsykError):
    """Logarithm of a non-positive value requested inside a fit window."""


class PilotConvergenceFailure(BsykError):
    """Trotter step sensitivity exceeds the statistical error of a pilot run."""


class PrecisionLoss(UserWarning):
    """Sign-alternating recombination lost more relative precision than expected."""
