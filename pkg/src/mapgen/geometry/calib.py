"""Camera/LiDAR calibration and point projection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Calibration:
    """KITTI-style projection chain ``uv ~ P @ [R_rect @ (T @ [x; 1]); 1]``.

    ``P`` is 3x4, ``R_rect`` 3x3, ``T_lidar_to_cam`` 3x4.
    """

    P: np.ndarray
    R_rect: np.ndarray
    T_lidar_to_cam: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "P", np.asarray(self.P, dtype=np.float64).reshape(3, 4))
        object.__setattr__(self, "R_rect", np.asarray(self.R_rect, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "T_lidar_to_cam",
                           np.asarray(self.T_lidar_to_cam, dtype=np.float64).reshape(3, 4))
        for name in ("P", "R_rect", "T_lidar_to_cam"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"calibration matrix {name} has non-finite entries")
        if not np.allclose(self.R_rect @ self.R_rect.T, np.eye(3), atol=1e-6):
            raise ValueError("R_rect is not orthonormal")

    # lidar -> rectified camera
    def lidar_to_rect(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        cam = pts @ self.T_lidar_to_cam[:, :3].T + self.T_lidar_to_cam[:, 3]
        return cam @ self.R_rect.T

    def rect_to_lidar(self, rect: np.ndarray) -> np.ndarray:
        rect = np.asarray(rect, dtype=np.float64).reshape(-1, 3)
        cam = rect @ self.R_rect  # R_rect is orthonormal
        rot = self.T_lidar_to_cam[:, :3]
        return np.linalg.solve(rot, (cam - self.T_lidar_to_cam[:, 3]).T).T

    def rect_to_image(self, rect: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        hom = rect @ self.P[:, :3].T + self.P[:, 3]
        depth = hom[:, 2]
        valid = depth > 0
        safe = np.where(valid, depth, 1.0)
        uv = hom[:, :2] / safe[:, None]
        uv[~valid] = 0.0
        return uv, depth

    def image_to_rect(self, uv: np.ndarray, depth: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
        depth = np.asarray(depth, dtype=np.float64).reshape(-1)
        hom = np.column_stack([uv * depth[:, None], depth])
        return np.linalg.solve(self.P[:, :3], (hom - self.P[:, 3]).T).T

    @property
    def focal(self) -> float:
        return float(self.P[0, 0])


def project_points(calib: Calibration, pts: np.ndarray):
    """Project LiDAR points to pixels.

    Returns ``(uv, depth, valid)``; ``depth`` is the pre-division homogeneous z and
    points with ``depth <= 0`` are flagged invalid with ``uv`` set to 0 (never NaN).
    """
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    uv, depth = calib.rect_to_image(calib.lidar_to_rect(pts))
    return uv, depth, depth > 0


def backproject(calib: Calibration, uv: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """Inverse of :func:`project_points` for valid points."""
    return calib.rect_to_lidar(calib.image_to_rect(uv, depth))
