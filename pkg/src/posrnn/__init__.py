"""Positional encodings and gradient stability in recurrent sequence models."""

from .errors import (
    ConfigError,
    CorruptCheckpointError,
    DtypeError,
    NumericsError,
    PosrnnError,
    RangeError,
    ShapeError,
    SingularityError,
    UsageError,
    VocabError,
)

__version__ = "0.1.0"
