"""Exception taxonomy shared by all modules.

The CLI maps ConfigError (and argparse usage errors) to exit code 2 and
everything else to exit code 1.
"""


class ConfigError(ValueError):
    """Invalid configuration: bad band edges, shape mismatches, bad arguments."""


class DataError(ValueError):
    """Malformed input data: NaNs in samples, bad gesture strings, length mismatches."""


class NotReadyError(RuntimeError):
    """The sample history is too short to build a full decoder input frame."""


class NumericFault(ArithmeticError):
    """A non-finite value appeared inside the network; message names the layer."""


class FrameError(ValueError):
    """Malformed wire frame; carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class CheckpointError(ValueError):
    """Checkpoint bytes rejected: bad magic, version, truncation, or checksum."""
