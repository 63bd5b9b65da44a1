from __future__ import annotations

import math
from dataclasses import astuple, dataclass

import numpy as np


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    out = np.mod(np.asarray(a, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    out = np.where(out <= -np.pi, out + 2 * np.pi, out)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Box3D:
    """Oriented box: geometric center (LiDAR frame, z up), size, yaw about z.

    ``l`` runs along the heading, ``w`` across it, ``h`` vertically.
    """

    cx: float
    cy: float
    cz: float
    h: float
    l: float
    w: float
    yaw: float

    def __post_init__(self):
        vals = astuple(self)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box parameters {vals}")
        if min(self.h, self.l, self.w) <= 0:
            raise ValueError(f"box dimensions must be positive, got h={self.h} l={self.l} w={self.w}")

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "Box3D":
        return cls(*(float(v) for v in np.asarray(arr, dtype=np.float64).reshape(7)))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz])

    @property
    def volume(self) -> float:
        return self.h * self.l * self.w


@dataclass(frozen=True)
class Box2D:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        vals = astuple(self)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite 2D box {vals}")
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError(f"degenerate 2D box {vals}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    def clamp(self, width: int, height: int) -> "Box2D":
        return Box2D(max(self.xmin, 0.0), max(self.ymin, 0.0),
                     min(self.xmax, width - 1.0), min(self.ymax, height - 1.0))


# Bottom face counter-clockwise seen from above, then the top face in the same order.
_CORNER_SIGNS = np.array([
    [1, -1, -1], [1, 1, -1], [-1, 1, -1], [-1, -1, -1],
    [1, -1, 1], [1, 1, 1], [-1, 1, 1], [-1, -1, 1],
], dtype=np.float64)


def yaw_rotation(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def box_corners(b: Box3D) -> np.ndarray:
    """8x3 corners of the box."""
    local = _CORNER_SIGNS * (0.5 * np.array([b.l, b.w, b.h]))
    return local @ yaw_rotation(b.yaw).T + b.center


def points_in_box(b: Box3D, pts: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """Inclusive membership test in the box frame (``eps`` absorbs ray-cast rounding)."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    local = (pts - b.center) @ yaw_rotation(b.yaw)
    half = 0.5 * np.array([b.l, b.w, b.h]) + eps
    return np.all(np.abs(local) <= half, axis=1)
