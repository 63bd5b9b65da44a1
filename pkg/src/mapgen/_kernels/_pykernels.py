"""Pure-Python/numpy versions of the compiled kernels (same signatures and results)."""
from __future__ import annotations

import math

import numpy as np

EPS = 1e-9
NO_HIT = -2
GROUND = -1


def footprint(cx, cy, l, w, yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    out = []
    for lx, ly in ((0.5 * l, -0.5 * w), (0.5 * l, 0.5 * w), (-0.5 * l, 0.5 * w), (-0.5 * l, -0.5 * w)):
        out.append((cx + c * lx - s * ly, cy + s * lx + c * ly))
    return out


def polygon_area(poly) -> float:
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return 0.5 * acc


def clip_polygon(subject, clip):
    """Sutherland-Hodgman: intersect ``subject`` with convex CCW polygon ``clip``."""
    out = list(subject)
    n = len(clip)
    for i in range(n):
        if not out:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp = out
        out = []
        m = len(inp)
        for j in range(m):
            px, py = inp[j]
            qx, qy = inp[(j + 1) % m]
            sp = ex * (py - ay) - ey * (px - ax)
            sq = ex * (qy - ay) - ey * (qx - ax)
            p_in = sp >= -EPS
            q_in = sq >= -EPS
            if p_in:
                out.append((px, py))
            if p_in != q_in:
                t = sp / (sp - sq)
                out.append((px + t * (qx - px), py + t * (qy - py)))
    return out


def bev_intersection(a, b) -> float:
    pa = footprint(a[0], a[1], a[4], a[5], a[6])
    pb = footprint(b[0], b[1], b[4], b[5], b[6])
    return max(polygon_area(clip_polygon(pa, pb)), 0.0)


def bev_iou_pairs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 7)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 7)
    out = np.zeros(len(a))
    for i in range(len(a)):
        aa, bb = a[i].tolist(), b[i].tolist()
        area_a = aa[4] * aa[5]
        area_b = bb[4] * bb[5]
        if area_a <= 0 or area_b <= 0:
            continue
        inter = bev_intersection(aa, bb)
        union = area_a + area_b - inter
        out[i] = min(max(inter / union, 0.0), 1.0) if union > 0 else 0.0
    return out


def iou3d_pairs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 7)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 7)
    out = np.zeros(len(a))
    for i in range(len(a)):
        aa, bb = a[i].tolist(), b[i].tolist()
        vol_a = aa[3] * aa[4] * aa[5]
        vol_b = bb[3] * bb[4] * bb[5]
        if vol_a <= 0 or vol_b <= 0:
            continue
        zo = min(aa[2] + 0.5 * aa[3], bb[2] + 0.5 * bb[3]) - max(aa[2] - 0.5 * aa[3], bb[2] - 0.5 * bb[3])
        if zo <= 0:
            continue
        inter = bev_intersection(aa, bb) * zo
        union = vol_a + vol_b - inter
        out[i] = min(max(inter / union, 0.0), 1.0) if union > 0 else 0.0
    return out


def raycast(origin: np.ndarray, dirs: np.ndarray, boxes: np.ndarray, ground_z: float,
            max_range: float) -> tuple[np.ndarray, np.ndarray]:
    """First hit along each ray against oriented boxes and the plane ``z = ground_z``.

    Returns ``(t, hit)`` where ``hit`` is the box index, ``-1`` for ground, ``-2``
    for no return within ``max_range``.
    """
    origin = np.asarray(origin, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    n = len(dirs)
    best = np.full(n, np.inf)
    hit = np.full(n, NO_HIT, dtype=np.int64)
    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        tg = np.where(dz < 0, (ground_z - origin[2]) / dz, np.inf)
    ok = (tg > EPS) & (tg <= max_range)
    best[ok] = tg[ok]
    hit[ok] = GROUND
    for k, (cx, cy, cz, h, l, w, yaw) in enumerate(boxes):
        c, s = math.cos(yaw), math.sin(yaw)
        ox, oy, oz = origin[0] - cx, origin[1] - cy, origin[2] - cz
        lo = np.array([c * ox + s * oy, -s * ox + c * oy, oz])
        ld = np.stack([c * dirs[:, 0] + s * dirs[:, 1], -s * dirs[:, 0] + c * dirs[:, 1], dirs[:, 2]], 1)
        half = np.array([0.5 * l, 0.5 * w, 0.5 * h])
        tmin = np.full(n, -np.inf)
        tmax = np.full(n, np.inf)
        alive = np.ones(n, dtype=bool)
        for ax in range(3):
            d = ld[:, ax]
            par = np.abs(d) < 1e-15
            alive &= ~(par & (np.abs(lo[ax]) > half[ax]))
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (-half[ax] - lo[ax]) / d
                t2 = (half[ax] - lo[ax]) / d
            near = np.where(par, -np.inf, np.minimum(t1, t2))
            far = np.where(par, np.inf, np.maximum(t1, t2))
            tmin = np.maximum(tmin, near)
            tmax = np.minimum(tmax, far)
        cand = alive & (tmin <= tmax) & (tmin > EPS) & (tmin <= max_range) & (tmin < best)
        best[cand] = tmin[cand]
        hit[cand] = k
    best[hit == NO_HIT] = np.inf
    return best, hit
