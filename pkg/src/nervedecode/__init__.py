"""nervedecode: real-time multichannel nerve-signal decoding.

Signal path: band-pass 25-600 Hz at 10 kHz, decimate to 5 kHz, 14 sliding
time-domain features per channel, conv + GRU multi-label classifier over six
degrees of freedom, with a streaming engine, evaluation harness, and a
synthetic signal generator for verification.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    CheckpointError, ConfigError, DataError, FrameError, NotReadyError, NumericFault,
)
