"""3D positions, distances and the coordinate normalization used by the encoders."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Location3D:
    """A position in meters; z is altitude above ground (>= 0)."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError("coordinates must be finite")
        if self.z < 0:
            raise ValueError("z must be >= 0, got %r" % (self.z,))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @staticmethod
    def from_array(a) -> "Location3D":
        return Location3D(float(a[0]), float(a[1]), float(a[2]))


def distance(a: Location3D, b: Location3D) -> float:
    """Euclidean 3D distance in meters."""
    return math.dist((a.x, a.y, a.z), (b.x, b.y, b.z))


def horizontal_distance(a: Location3D, b: Location3D) -> float:
    """Ground-plane distance in meters."""
    return math.hypot(a.x - b.x, a.y - b.y)


def stack_locations(locs) -> np.ndarray:
    """Stack an iterable of Location3D into an (n, 3) float array."""
    return np.array([[p.x, p.y, p.z] for p in locs], dtype=float).reshape(-1, 3)


@dataclass(frozen=True)
class LocationNormalizer:
    """Affine map from zone coordinates (meters) onto [-1, 1] per axis.

    Raw meter-scale inputs saturate the attention logits, so every
    location is normalized with the zone bounds before encoding.
    """

    x_max: float
    y_max: float
    z_max: float

    def normalize(self, xyz) -> np.ndarray:
        scale = np.array([self.x_max, self.y_max, self.z_max], dtype=float)
        return 2.0 * np.asarray(xyz, dtype=float) / scale - 1.0
