"""Differentiable 3D IoU and the distance-IoU box loss."""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from .boxes import Box3D

EPS = 1e-9
_SX = np.array([0.5, 0.5, -0.5, -0.5])
_SY = np.array([-0.5, 0.5, 0.5, -0.5])


def bev_corners(params: Tensor) -> Tensor:
    """``[B, 7]`` box parameters to ``[B, 4, 2]`` footprint corners (CCW)."""
    cx, cy = params[:, 0:1], params[:, 1:2]
    l, w, yaw = params[:, 4:5], params[:, 5:6], params[:, 6:7]
    c, s = ad.cos(yaw), ad.sin(yaw)
    lx = l * _SX
    ly = w * _SY
    x = cx + c * lx - s * ly
    y = cy + s * lx + c * ly
    return ad.stack([x, y], axis=2)


def _shoelace(p: np.ndarray) -> float:
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _shoelace_grad(p: np.ndarray) -> np.ndarray:
    x, y = p[:, 0], p[:, 1]
    return 0.5 * np.column_stack([np.roll(y, -1) - np.roll(y, 1), np.roll(x, 1) - np.roll(x, -1)])


def _inside(pt: np.ndarray, poly: np.ndarray) -> bool:
    for j in range(4):
        a, b = poly[j], poly[(j + 1) % 4]
        if (b[0] - a[0]) * (pt[1] - a[1]) - (b[1] - a[1]) * (pt[0] - a[0]) < -EPS:
            return False
    return True


def _convex_overlap(pa: np.ndarray, pb: np.ndarray):
    """Vertices of the overlap polygon of two CCW quads, with their provenance.

    Provenance is ``("a", i)``, ``("b", j)`` or ``("x", i, j)`` for the crossing of
    edge ``i`` of ``pa`` with edge ``j`` of ``pb``.
    """
    a_in = [_inside(pa[i], pb) for i in range(4)]
    if all(a_in):
        return pa.copy(), [("a", i) for i in range(4)]
    b_in = [_inside(pb[j], pa) for j in range(4)]
    if all(b_in):
        return pb.copy(), [("b", j) for j in range(4)]
    verts, prov = [], []
    for i in range(4):
        if a_in[i]:
            verts.append(pa[i])
            prov.append(("a", i))
    for j in range(4):
        if b_in[j]:
            verts.append(pb[j])
            prov.append(("b", j))
    for i in range(4):
        p, r = pa[i], pa[(i + 1) % 4] - pa[i]
        for j in range(4):
            q, s = pb[j], pb[(j + 1) % 4] - pb[j]
            den = r[0] * s[1] - r[1] * s[0]
            if abs(den) < 1e-14:
                continue
            qp = q - p
            t = (qp[0] * s[1] - qp[1] * s[0]) / den
            u = (qp[0] * r[1] - qp[1] * r[0]) / den
            if -EPS <= t <= 1 + EPS and -EPS <= u <= 1 + EPS:
                verts.append(p + t * r)
                prov.append(("x", i, j))
    if len(verts) < 3:
        return np.zeros((0, 2)), []
    v = np.array(verts)
    centre = v.mean(axis=0)
    order = np.argsort(np.arctan2(v[:, 1] - centre[1], v[:, 0] - centre[0]), kind="stable")
    return v[order], [prov[k] for k in order]


def _crossing_grad(p, p2, q, q2, x, gx):
    """Backprop ``gx`` through the crossing point ``x`` of lines (p, p2) and (q, q2)."""
    r, s = p2 - p, q2 - q
    na = np.array([-r[1], r[0]])
    nb = np.array([-s[1], s[0]])
    lam = np.linalg.solve(np.array([na, nb]).T, gx)
    wa = np.array([(p - x)[1], -(p - x)[0]])
    wb = np.array([(q - x)[1], -(q - x)[0]])
    return lam[0] * (na - wa), lam[0] * wa, lam[1] * (nb - wb), lam[1] * wb


def overlap_area(ca: Tensor, cb: Tensor) -> Tensor:
    """Area of the overlap of two batches of CCW quads ``[B, 4, 2]`` -> ``[B]``."""
    A, Bq = ca.data, cb.data
    n = A.shape[0]
    areas = np.zeros(n)
    cache = []
    for k in range(n):
        verts, prov = _convex_overlap(A[k], Bq[k])
        areas[k] = max(_shoelace(verts), 0.0) if len(verts) >= 3 else 0.0
        cache.append((verts, prov))

    def backward(g):
        ga = np.zeros_like(A)
        gb = np.zeros_like(Bq)
        for k, (verts, prov) in enumerate(cache):
            if len(verts) < 3 or areas[k] <= 0.0:
                continue
            gv = _shoelace_grad(verts) * g[k]
            for vert, pv, gvert in zip(verts, prov, gv):
                if pv[0] == "a":
                    ga[k, pv[1]] += gvert
                elif pv[0] == "b":
                    gb[k, pv[1]] += gvert
                else:
                    i, j = pv[1], pv[2]
                    i2, j2 = (i + 1) % 4, (j + 1) % 4
                    dp, dp2, dq, dq2 = _crossing_grad(A[k, i], A[k, i2], Bq[k, j], Bq[k, j2], vert, gvert)
                    ga[k, i] += dp
                    ga[k, i2] += dp2
                    gb[k, j] += dq
                    gb[k, j2] += dq2
        return ga, gb

    return ad.custom(areas, (ca, cb), backward)


def polygon_area(c: Tensor) -> Tensor:
    """Shoelace area of ``[B, 4, 2]`` quads, evaluated like :func:`overlap_area`."""
    P = c.data
    areas = np.array([_shoelace(P[k]) for k in range(P.shape[0])])
    return ad.custom(areas, (c,), lambda g: (np.stack([_shoelace_grad(P[k]) * g[k]
                                                       for k in range(P.shape[0])]),))


def iou3d_tensor(pred: Tensor, gt) -> Tensor:
    """Differentiable 3D IoU of ``[B, 7]`` parameter rows."""
    gt = ad.tensor(gt)
    ca, cb = bev_corners(pred), bev_corners(gt)
    inter_area = overlap_area(ca, cb)
    za0 = pred[:, 2] - pred[:, 3] * 0.5
    za1 = pred[:, 2] + pred[:, 3] * 0.5
    zb0 = gt[:, 2] - gt[:, 3] * 0.5
    zb1 = gt[:, 2] + gt[:, 3] * 0.5
    zo = ad.relu(ad.minimum(za1, zb1) - ad.maximum(za0, zb0))
    inter = inter_area * zo
    vol_a = polygon_area(ca) * (za1 - za0)
    vol_b = polygon_area(cb) * (zb1 - zb0)
    return inter / (vol_a + vol_b - inter)


def _param_rows(gt) -> np.ndarray:
    """Constant ``[B, 7]`` rows from a Box3D, a list of them, a tensor or an array."""
    if isinstance(gt, Box3D):
        return gt.as_array()[None]
    if isinstance(gt, (list, tuple)) and gt and isinstance(gt[0], Box3D):
        return np.stack([b.as_array() for b in gt])
    return np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=np.float64).reshape(-1, 7)


def diou_loss(pred: Tensor, gt) -> Tensor:
    """Per-box ``1 - IoU3D + |c_pred - c_gt|^2 / diag^2``.

    ``diag`` is the diagonal of the smallest axis-aligned 3D box enclosing both
    boxes. ``pred`` is ``[B, 7]`` (or ``[7]``) in the graph; ``gt`` is constant.
    """
    single = pred.ndim == 1
    if single:
        pred = pred.reshape(1, 7)
    gt = ad.tensor(_param_rows(gt))
    iou = iou3d_tensor(pred, gt)
    ca, cb = bev_corners(pred), bev_corners(gt)
    xs = ad.concat([ca[:, :, 0], cb[:, :, 0]], axis=1)
    ys = ad.concat([ca[:, :, 1], cb[:, :, 1]], axis=1)
    zt = ad.maximum(pred[:, 2] + pred[:, 3] * 0.5, gt[:, 2] + gt[:, 3] * 0.5)
    zb = ad.minimum(pred[:, 2] - pred[:, 3] * 0.5, gt[:, 2] - gt[:, 3] * 0.5)
    dx = xs.max(axis=1) + (-xs).max(axis=1)
    dy = ys.max(axis=1) + (-ys).max(axis=1)
    dz = zt - zb
    diag2 = dx * dx + dy * dy + dz * dz
    dc = pred[:, 0:3] - gt[:, 0:3]
    dist2 = (dc * dc).sum(axis=1)
    loss = 1.0 - iou + dist2 / diag2
    return loss.reshape(()) if single else loss
