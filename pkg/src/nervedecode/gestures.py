"""Gesture labels: 6-bit flex/rest strings, one bit per degree of freedom.

Bit order is [thumb, index, middle, ring, little, wrist], so "111110" is a
fist and "000001" is wrist pronation. Labels are always exactly 6 characters
of '0'/'1'; shorter forms are rejected.
"""
from __future__ import annotations

import numpy as np

from .errors import DataError

NUM_DOF = 6
DOF_NAMES = ("thumb", "index", "middle", "ring", "little", "wrist")

REST = "000000"
THUMB_FLEX = "100000"
INDEX_FLEX = "010000"
MIDDLE_FLEX = "001000"
RING_FLEX = "000100"
LITTLE_FLEX = "000010"
WRIST_PRONATION = "000001"
FIST = "111110"
INDEX_PINCH = "110000"

INDIVIDUAL_FLEXES = (THUMB_FLEX, INDEX_FLEX, MIDDLE_FLEX, RING_FLEX, LITTLE_FLEX)

# 9-way target set used by the gesture matching task: rest + 8 others.
MATCHING_TARGETS = (REST,) + INDIVIDUAL_FLEXES + (FIST, INDEX_PINCH, WRIST_PRONATION)


def validate_gesture(gesture: str) -> str:
    if not isinstance(gesture, str) or len(gesture) != NUM_DOF or any(c not in "01" for c in gesture):
        raise DataError(f"gesture must be a 6-char string of 0/1, got {gesture!r}")
    return gesture


def gesture_to_bits(gesture: str) -> np.ndarray:
    """'110000' -> array([1, 1, 0, 0, 0, 0], dtype=uint8)."""
    validate_gesture(gesture)
    return np.frombuffer(gesture.encode("ascii"), dtype=np.uint8) - ord("0")


def bits_to_gesture(bits) -> str:
    arr = np.asarray(bits)
    if arr.shape != (NUM_DOF,):
        raise DataError(f"expected {NUM_DOF} bits, got shape {arr.shape}")
    return "".join("1" if b else "0" for b in arr)


def gesture_to_mask(gesture: str) -> int:
    """Pack a label into a byte, bit 0 = thumb ... bit 5 = wrist."""
    bits = gesture_to_bits(gesture)
    return int(sum(int(b) << i for i, b in enumerate(bits)))


def mask_to_gesture(mask: int) -> str:
    return "".join("1" if (mask >> i) & 1 else "0" for i in range(NUM_DOF))
