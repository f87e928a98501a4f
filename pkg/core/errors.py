"""
Exception hierarchy for the network compiler.
Every library operation raises one of these instead of returning sentinels.
"""


class QNetError(Exception):
    """Base class for all compiler errors."""


class UsageError(QNetError):
    """Invalid command-line usage or flag value."""


# Simulator

class SimulationError(QNetError, ValueError):
    """Errors raised while building or simulating circuits."""


class QbitIndexError(SimulationError):
    """A gate or measurement references a qbit outside the register."""


class NonOrthogonalMatrixError(SimulationError):
    """A UnitaryInit matrix fails the orthogonality check."""


class CircuitFormatError(SimulationError):
    """Malformed circuit text or matrix file, or an ill-formed Circuit."""


class CircuitWidthError(SimulationError):
    """The circuit needs more qbits than the simulator supports."""


# Engine

class EngineError(QNetError, ValueError):
    """Errors raised by the classical forward/training engine."""


class EmptyInputError(EngineError):
    """An operation received no inputs (empty vector, batch or dataset)."""


class ZeroVectorError(EngineError):
    """Amplitude embedding of an all-zero input."""


class WidthMismatchError(EngineError):
    """Input and weight widths disagree, or a width is not a power of two."""


class ShapeMismatchError(EngineError):
    """Image shape does not match the network input shape."""


class ProblemSizeError(EngineError):
    """Brute-force enumeration requested beyond its supported size."""


class DatasetError(EngineError):
    """Dataset labels do not fit the network."""


# Weight mapping and backends

class MappingError(QNetError, ValueError):
    """Errors raised by the weight-mapping and qbit-mapping passes."""


class StateRangeError(MappingError):
    """A basis state anchor lies outside [0, 2^k) or is not allowed."""


class NoBackendError(MappingError):
    """No backend is large enough for the circuit."""


class BackendFormatError(MappingError):
    """Malformed backend descriptor."""


# Data

class DataFormatError(QNetError, ValueError):
    """Errors raised while reading or preparing datasets."""


class BadMagicError(DataFormatError):
    """IDX file header carries an unexpected magic number."""


class TruncatedFileError(DataFormatError):
    """IDX file is shorter than its header declares."""


class UnsupportedResolutionError(DataFormatError):
    """Downsampling target is not one of the supported sizes."""


class EmptySubsetError(DataFormatError):
    """Class-subset extraction matched no samples."""


class ModelFormatError(QNetError, ValueError):
    """Malformed model file."""
