"""Right-angle rotations and their 4-way targets for the auxiliary task.

Rotations are counter-clockwise: at 90 degrees, source pixel ``(i, j)`` of an
``H x W`` image lands at ``(W - 1 - j, i)``. Target ids follow the angle order
0, 90, 180, 270 -> 0, 1, 2, 3.
"""

from __future__ import annotations

from enum import IntEnum
from typing import List, NamedTuple

import numpy as np

from .errors import InputDomainError


class Rotation(IntEnum):
    R0 = 0
    R90 = 1
    R180 = 2
    R270 = 3

    @property
    def degrees(self) -> int:
        return 90 * int(self)

    @classmethod
    def from_degrees(cls, degrees: int) -> "Rotation":
        if degrees % 90:
            raise InputDomainError(f"{degrees} is not a multiple of 90")
        return cls((degrees // 90) % 4)


ROTATIONS = tuple(Rotation)


def rotate(image: np.ndarray, r: Rotation) -> np.ndarray:
    """Rotate the last two axes of ``image`` counter-clockwise by ``r``."""
    return np.ascontiguousarray(np.rot90(image, k=int(Rotation(r)), axes=(-2, -1)))


class RotatedSample(NamedTuple):
    image: np.ndarray
    label: np.ndarray
    rotation: Rotation


def expand_with_rotations(sample) -> List[RotatedSample]:
    """All four rotations of a mixed sample; the class label is carried unchanged."""
    return [RotatedSample(rotate(sample.image, r), sample.label, r) for r in ROTATIONS]
