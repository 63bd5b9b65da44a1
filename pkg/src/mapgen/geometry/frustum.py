from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .boxes import Box2D
from .calib import Calibration, project_points


@dataclass
class FrustumCloud:
    """Points whose projections fall inside a 2D box.

    ``projections`` are pixel coordinates in whatever image frame the cloud was
    extracted from (full image, or crop after :func:`to_crop`). ``indices`` point
    back into the source scene cloud.
    """

    points: np.ndarray
    projections: np.ndarray
    rgb: np.ndarray
    fg_mask: np.ndarray | None = None
    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        n = len(self.points)
        if len(self.projections) != n or len(self.rgb) != n:
            raise ValueError("frustum arrays disagree in length")
        if self.fg_mask is not None and len(self.fg_mask) != n:
            raise ValueError("fg_mask length mismatch")
        if len(self.indices) != n:
            self.indices = np.arange(n, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, keep) -> "FrustumCloud":
        return FrustumCloud(
            self.points[keep], self.projections[keep], self.rgb[keep],
            None if self.fg_mask is None else self.fg_mask[keep], self.indices[keep],
        )


def nearest_pixel(uv: np.ndarray, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Column/row of the pixel nearest to each ``uv`` (pixel centers at integers)."""
    col = np.clip(np.floor(uv[:, 0] + 0.5).astype(np.int64), 0, width - 1)
    row = np.clip(np.floor(uv[:, 1] + 0.5).astype(np.int64), 0, height - 1)
    return col, row


def sample_rgb(image: np.ndarray, uv: np.ndarray, bilinear: bool = False) -> np.ndarray:
    """RGB in [0, 1] at image positions ``uv`` (nearest pixel unless ``bilinear``)."""
    h, w = image.shape[:2]
    img = image.astype(np.float64) / 255.0 if image.dtype == np.uint8 else image.astype(np.float64)
    if not bilinear:
        col, row = nearest_pixel(uv, w, h)
        return img[row, col, :3]
    x = np.clip(uv[:, 0], 0, w - 1)
    y = np.clip(uv[:, 1], 0, h - 1)
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    return ((1 - fy) * ((1 - fx) * img[y0, x0, :3] + fx * img[y0, x1, :3])
            + fy * ((1 - fx) * img[y1, x0, :3] + fx * img[y1, x1, :3]))


def extract_frustum(calib: Calibration, cloud: np.ndarray, box: Box2D, image: np.ndarray,
                    bilinear: bool = False) -> FrustumCloud:
    """Keep forward points projecting into ``[xmin, xmax) x [ymin, ymax)``."""
    pts = np.asarray(cloud, dtype=np.float64)[:, :3]
    uv, _, valid = project_points(calib, pts)
    inside = (valid & (uv[:, 0] >= box.xmin) & (uv[:, 0] < box.xmax)
              & (uv[:, 1] >= box.ymin) & (uv[:, 1] < box.ymax))
    idx = np.flatnonzero(inside)
    return FrustumCloud(pts[idx], uv[idx], sample_rgb(image, uv[idx], bilinear), None, idx)


def image_to_crop(uv: np.ndarray, box: Box2D, size: tuple[int, int]) -> np.ndarray:
    """Map image pixel coordinates inside ``box`` to crop coordinates in ``[0, W) x [0, H)``."""
    h, w = size
    out = np.empty_like(np.asarray(uv, dtype=np.float64))
    out[:, 0] = (uv[:, 0] - box.xmin) * (w / box.width)
    out[:, 1] = (uv[:, 1] - box.ymin) * (h / box.height)
    out[:, 0] = np.minimum(out[:, 0], np.nextafter(float(w), 0.0))
    out[:, 1] = np.minimum(out[:, 1], np.nextafter(float(h), 0.0))
    return out


def crop_to_image(uv: np.ndarray, box: Box2D, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    out = np.empty_like(np.asarray(uv, dtype=np.float64))
    out[:, 0] = uv[:, 0] * (box.width / w) + box.xmin
    out[:, 1] = uv[:, 1] * (box.height / h) + box.ymin
    return out


def to_crop(frustum: FrustumCloud, box: Box2D, size: tuple[int, int]) -> FrustumCloud:
    return replace(frustum, projections=image_to_crop(frustum.projections, box, size))
