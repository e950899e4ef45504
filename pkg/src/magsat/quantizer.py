"""Seven-level dipole quantizer.

Maps a smooth controller command onto the level grid
{-u_max, -2u_max/3, -u_max/3, 0, u_max/3, 2u_max/3, u_max}, per axis.

The brackets are half-open with the lower edge mapping up: a positive
command returns the smallest level at or above it, a negative command in
[-u_max, 0) returns the smallest level strictly above it, and anything
outside [-u_max, u_max] saturates. An exactly-zero command returns zero
(the literal bracket on (0, u_max/3) would otherwise never emit zero for a
controller resting at its reference). The quantizer is stateless.

Level values are always computed as fractions of u_max at the point of use
(never stored as rounded decimals), so the codomain is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import DipoleCommand


@dataclass(frozen=True)
class QuantizerLevels:
    """The ordered seven-level output grid for a given dipole bound."""

    u_max: float

    def __post_init__(self):
        if not (math.isfinite(self.u_max) and self.u_max > 0.0):
            raise ValueError(f"u_max must be positive, got {self.u_max}")

    @property
    def levels(self) -> tuple[float, ...]:
        u = self.u_max
        return (-u, -(2.0 * u / 3.0), -(u / 3.0), 0.0, u / 3.0, 2.0 * u / 3.0, u)


def quantize(u_mpc: float, u_max: float) -> float:
    """Quantize one dipole component onto the seven-level grid.

    Inputs outside [-u_max, u_max] are legal and saturate; the controller
    guarantees the bound but the quantizer does not rely on it.
    """
    if not (math.isfinite(u_max) and u_max > 0.0):
        raise ValueError(f"u_max must be positive, got {u_max}")
    if not math.isfinite(u_mpc):
        raise ValueError(f"command must be finite, got {u_mpc}")
    two_thirds = 2.0 * u_max / 3.0
    one_third = u_max / 3.0
    if u_mpc == 0.0:
        return 0.0
    if u_mpc >= two_thirds:
        return u_max
    if u_mpc >= one_third:
        return two_thirds
    if u_mpc > 0.0:
        return one_third
    if u_mpc >= -one_third:
        return 0.0
    if u_mpc >= -two_thirds:
        return -one_third
    if u_mpc >= -u_max:
        return -two_thirds
    return -u_max


def quantize_vector(m: DipoleCommand, u_max: float) -> DipoleCommand:
    """Componentwise quantization of a dipole command."""
    return DipoleCommand(np.array([quantize(float(v), u_max) for v in m.m]))
