"""Foreground segmentation networks for frustum clouds and image crops."""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import MLP, Conv2d, Linear, Module, Tensor
from ..geometry import FrustumCloud

DEPTH_SCALE = 10.0


def frustum_angle(points: np.ndarray) -> float:
    """Median azimuth of a cloud; the frustum is rotated so this becomes the x axis."""
    if len(points) == 0:
        return 0.0
    return float(np.median(np.arctan2(points[:, 1], points[:, 0])))


def rotate_z(points: np.ndarray, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    out = np.array(points, dtype=np.float64, copy=True)
    x, y = points[:, 0], points[:, 1]
    out[:, 0] = c * x - s * y
    out[:, 1] = s * x + c * y
    return out


def point_inputs(points: np.ndarray, rgb: np.ndarray) -> np.ndarray:
    """Six input channels per point: frustum-aligned x/10, y/10, z and centered RGB."""
    local = rotate_z(points, -frustum_angle(points))
    local[:, :2] /= DEPTH_SCALE
    return np.column_stack([local, rgb - 0.5])


class PointSegNet(Module):
    """Shared per-point MLP, max-pooled global feature, per-point classifier."""

    def __init__(self, rng: np.random.Generator, widths=(32, 64, 256), head=(128,), in_dim: int = 6):
        self.encoder = MLP([in_dim, *widths], rng, final_activation=True)
        self.head = MLP([2 * widths[-1], *head, 2], rng)

    def __call__(self, x, valid: np.ndarray | None = None) -> Tensor:
        """``x`` is ``[B, n, 6]``; rows with ``valid`` false are padding and never pooled."""
        x = ad.tensor(x)
        if valid is None:
            valid = np.ones(x.shape[:2], dtype=bool)
        feat = self.encoder(x)
        glob = ad.max_pool_over_points(feat, valid)
        b, n, c = feat.shape
        glob = ad.broadcast_to(glob.reshape(b, 1, c), (b, n, c))
        return self.head(ad.concat([feat, glob], axis=2))


def adaptive_pool_matrix(n_in: int, g: int) -> np.ndarray:
    m = np.zeros((g, n_in))
    for i in range(g):
        lo = (i * n_in) // g
        hi = -((-(i + 1) * n_in) // g)
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def adaptive_avg_pool(x: Tensor, g: int) -> Tensor:
    """``[B, h, w, C] -> [B, g, g, C]`` averaging over (possibly overlapping) cells."""
    b, h, w, c = x.shape
    py = ad.tensor(adaptive_pool_matrix(h, g))
    px = ad.tensor(adaptive_pool_matrix(w, g).T)
    t = ad.matmul(py, x.reshape(b, h, w * c)).reshape(b, g, w, c)
    t = ad.matmul(t.transpose(0, 1, 3, 2), px)  # [B, g, C, g]
    return t.transpose(0, 1, 3, 2)


class ImageSegNet(Module):
    """Three stride-2 conv stages, pyramid pooling over 1/2/4 grids, light decoder.

    Returns per-pixel logits, a per-pixel feature map (``feat_dim`` channels) that
    point features are sampled from, and the global map ``Z`` used for pooling.
    """

    def __init__(self, rng: np.random.Generator, widths=(16, 32, 64), grids=(1, 2, 4),
                 pool_dim: int = 16, feat_dim: int = 64):
        c1, c2, c3 = widths
        self.enc1 = Conv2d(3, c1, 3, rng, stride=2, pad_mode="edge")
        self.enc2 = Conv2d(c1, c2, 3, rng, stride=2, pad_mode="edge")
        self.enc3 = Conv2d(c2, c3, 3, rng, stride=2, pad_mode="edge")
        self.grids = tuple(grids)
        self.pool_proj = [Linear(c3, pool_dim, rng) for _ in self.grids]
        self.fuse = Conv2d(c3 + pool_dim * len(self.grids), feat_dim, 3, rng, pad_mode="edge")
        self.skip = Linear(feat_dim + c1, feat_dim, rng)
        self.classifier = Linear(feat_dim, 2, rng)
        self.feat_dim = feat_dim

    def __call__(self, crops):
        x = ad.tensor(crops) - 0.5
        b, h, w, _ = x.shape
        e1 = ad.relu(self.enc1(x))
        e2 = ad.relu(self.enc2(e1))
        e3 = ad.relu(self.enc3(e2))
        hs, ws = e3.shape[1:3]
        branches = [e3]
        for g, proj in zip(self.grids, self.pool_proj):
            pooled = ad.relu(proj(adaptive_avg_pool(e3, g)))
            branches.append(ad.bilinear_upsample(pooled, (hs, ws)))
        fused = ad.relu(self.fuse(ad.concat(branches, axis=3)))
        z = ad.bilinear_upsample(fused, (h, w))
        mid = ad.bilinear_upsample(fused, e1.shape[1:3])
        feat = ad.relu(self.skip(ad.concat([mid, e1], axis=3)))
        feat = ad.bilinear_upsample(feat, (h, w))
        return self.classifier(feat), feat, z


def segment_points(net: PointSegNet, frustum: FrustumCloud) -> np.ndarray:
    """Per-point foreground logits ``[n, 2]`` for a single frustum."""
    x = point_inputs(frustum.points, frustum.rgb)[None]
    return net(x).data[0]


def segment_image(net: ImageSegNet, crop: np.ndarray):
    logits, feat, z = net(np.asarray(crop, dtype=np.float64)[None])
    return logits.data[0], feat.data[0], z.data[0]
