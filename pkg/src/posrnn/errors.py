"""Exception types shared across the package."""


class PosrnnError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(PosrnnError):
    """Operand shapes do not conform to the requested operation."""


class DtypeError(PosrnnError):
    """Complex operand passed to a real-only operation (or vice versa)."""


class UsageError(PosrnnError):
    """API misuse, e.g. backward from a non-terminal node."""


class ConfigError(PosrnnError):
    """Invalid or inconsistent configuration."""


class RangeError(PosrnnError):
    """Index outside the supported range (e.g. past encoder capacity)."""


class VocabError(PosrnnError):
    """Token id outside [0, vocab_size)."""


class SingularityError(PosrnnError):
    """Degenerate parameter value (e.g. zero eigenvalue in discretization)."""


class NumericsError(PosrnnError):
    """Non-finite value encountered where finiteness is required."""


class CorruptCheckpointError(PosrnnError):
    """Checkpoint blob does not match its manifest."""
