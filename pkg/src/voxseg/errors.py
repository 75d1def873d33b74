"""Exception types shared across the workbench."""


class VoxsegError(Exception):
    """Base class for all workbench errors."""


# --- volume I/O ---

class BadMagic(VoxsegError):
    """Input bytes are not a NIfTI-1 file."""


class UnsupportedDatatype(VoxsegError):
    """NIfTI datatype code outside the supported set."""


class TruncatedData(VoxsegError):
    """File ends before the voxel data promised by the header."""


class LossyDowncast(VoxsegError):
    """Values unrepresentable in the target datatype (strict mode)."""


class UnmappedLabel(VoxsegError):
    """Source label missing from the relabel table (error mode)."""


# --- tensor engine ---

class ShapeMismatch(VoxsegError):
    """Operand shapes incompatible with the requested operation."""


class EmptyOutput(VoxsegError):
    """Convolution shape formula yields an extent below 1."""


class NotScalar(VoxsegError):
    """backward() called on a non-scalar tensor."""


class DetachedGraph(VoxsegError):
    """backward() called on an already-consumed graph."""


class LabelOutOfRange(VoxsegError):
    """Target label not representable by the logit channels."""


class ChecksumMismatch(VoxsegError):
    """Checkpoint container checksum does not match its payload."""


class BadContainer(VoxsegError):
    """Checkpoint container is malformed."""


# --- model / pipelines ---

class InvalidConfig(VoxsegError):
    """Architecture configuration violates its invariants."""


class OutOfMemoryBudget(VoxsegError):
    """Estimated working set exceeds the configured memory ceiling."""


class PatchLargerThanVolume(VoxsegError):
    """Requested patch extent exceeds the volume extent."""


class GridMismatch(VoxsegError):
    """Patch probability maps do not match the planned grid."""


class PairingMismatch(VoxsegError):
    """Prediction/reference sets cannot be paired for evaluation."""


class InvalidSpec(VoxsegError):
    """Phantom specification violates its invariants."""


class DataError(VoxsegError):
    """Dataset manifest entry missing or unreadable."""


class InsufficientData(VoxsegError):
    """Not enough training entries for the requested sweep."""


class ConfigMismatch(VoxsegError):
    """Regime comparison attempted across unequal data/seed/budget."""


class ShapeIncompatible(VoxsegError):
    """Checkpoint and volume shape families are incompatible."""


# --- rating service ---

class ManifestError(VoxsegError):
    """Rating study manifest is invalid."""


class UnknownSession(VoxsegError):
    """No session with the given id."""


class IndexOutOfRange(VoxsegError):
    """Trial index outside the session."""


class DuplicateChoice(VoxsegError):
    """A choice was already recorded for this trial."""


class NoData(VoxsegError):
    """Tally requested with no recorded sessions."""
