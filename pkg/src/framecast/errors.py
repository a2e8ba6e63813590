"""Exception types shared across the package."""


class FramecastError(Exception):
    """Base class for all errors raised by this package."""


class BufferFormatError(FramecastError):
    """A binary buffer file is malformed; the message names the offending field."""


class ManifestError(FramecastError):
    """A sequence manifest is malformed or references missing data."""


class StateError(FramecastError):
    """Pipeline state handed to an operation does not match what it expects."""


class SequencingError(FramecastError):
    """Frames were fed to the pipeline out of timestamp order or too early."""


class PairingError(FramecastError):
    """Predicted and reference sequences could not be matched by timestamp."""


class CorrectorContractError(FramecastError):
    """A corrector returned outputs that violate its shape/range contract."""
