"""Exact overlap of oriented boxes (bird's-eye view and full 3D)."""
from __future__ import annotations

import numpy as np

from .. import _kernels
from .boxes import Box3D


def _as_rows(x) -> np.ndarray:
    if isinstance(x, Box3D):
        return x.as_array()[None]
    if isinstance(x, (list, tuple)) and x and isinstance(x[0], Box3D):
        return np.stack([b.as_array() for b in x])
    return np.asarray(x, dtype=np.float64).reshape(-1, 7)


def bev_iou(a, b) -> float:
    """IoU of the two rotated footprints (Sutherland-Hodgman clipping + shoelace)."""
    return float(_kernels.bev_iou_pairs(_as_rows(a), _as_rows(b))[0])


def iou3d(a, b) -> float:
    """BEV intersection area times vertical overlap, over the union of volumes."""
    return float(_kernels.iou3d_pairs(_as_rows(a), _as_rows(b))[0])


def bev_iou_many(a, b) -> np.ndarray:
    return _kernels.bev_iou_pairs(_as_rows(a), _as_rows(b))


def iou3d_many(a, b) -> np.ndarray:
    return _kernels.iou3d_pairs(_as_rows(a), _as_rows(b))


def bev_intersection_area(a, b) -> float:
    return float(_kernels.bev_intersection(_as_rows(a)[0], _as_rows(b)[0]))


def z_overlap(a: Box3D, b: Box3D) -> float:
    top = min(a.cz + 0.5 * a.h, b.cz + 0.5 * b.h)
    bottom = max(a.cz - 0.5 * a.h, b.cz - 0.5 * b.h)
    return max(top - bottom, 0.0)
