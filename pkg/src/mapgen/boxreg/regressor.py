"""Box regression from the enriched RGB cloud and the pooled image feature."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import MLP, Module, Tensor
from ..geometry import Box3D, diou_loss, wrap_angle
from ..segmentation import crop_pixels, rotate_z

CAR_PRIORS = (1.5, 3.9, 1.6)  # h, l, w in meters
BOX_FRAMES = ("frustum", "sensor")


@dataclass
class EnrichedCloud:
    points: np.ndarray
    rgb: np.ndarray
    origin_mask: np.ndarray  # true for measured points, false for generated ones

    def __len__(self) -> int:
        return len(self.points)


def enrich_cloud(points: np.ndarray, rgb: np.ndarray, decoded: np.ndarray, target_uv: np.ndarray,
                 crop: np.ndarray) -> EnrichedCloud:
    """Measured points followed by generated ones; a generated point takes the crop color
    of the pixel it was sampled from."""
    decoded = np.asarray(decoded, dtype=np.float64).reshape(-1, 3)
    h, w = crop.shape[:2]
    row, col = crop_pixels(np.asarray(target_uv, dtype=np.float64).reshape(-1, 2), w, h)
    gen_rgb = crop[row, col, :3]
    return EnrichedCloud(
        np.concatenate([points.reshape(-1, 3), decoded]),
        np.concatenate([rgb.reshape(-1, 3), gen_rgb]),
        np.concatenate([np.ones(len(points), dtype=bool), np.zeros(len(decoded), dtype=bool)]),
    )


def cloud_frame(points: np.ndarray, frame: str = "frustum") -> tuple[np.ndarray, float]:
    centroid = points.mean(axis=0)
    angle = float(np.arctan2(centroid[1], centroid[0])) if frame == "frustum" else 0.0
    return centroid, angle


IN_DIM = 6


def regressor_inputs(cloud: EnrichedCloud, frame: str = "frustum"):
    """Per-point input ``[m, 6]`` (object-frame xyz, centered RGB) and the frame used."""
    centroid, angle = cloud_frame(cloud.points, frame)
    local = rotate_z(cloud.points - centroid, -angle)
    return np.column_stack([local, cloud.rgb - 0.5]), centroid, angle


class BoxRegressor(Module):
    """Shared point MLP with max pooling, concatenated with the global image feature,
    decoded by a two-layer head into offset, log-size and a (sin, cos) heading pair."""

    def __init__(self, rng: np.random.Generator, widths=(64, 128, 512), img_dim: int = 64,
                 hidden: int = 256, priors=CAR_PRIORS, frame: str = "frustum", raw_direct: bool = False):
        if frame not in BOX_FRAMES:
            raise ValueError(f"frame must be one of {BOX_FRAMES}")
        self.encoder = MLP([IN_DIM, *widths], rng, final_activation=True)
        self.head = MLP([widths[-1] + img_dim, hidden, 8], rng)
        self.priors = np.asarray(priors, dtype=np.float64)
        self.frame = frame
        self.raw_direct = raw_direct

    def raw(self, x, valid: np.ndarray, f_img) -> Tensor:
        feat = ad.max_pool_over_points(self.encoder(ad.tensor(x)), valid)
        return self.head(ad.concat([feat, ad.tensor(f_img)], axis=1))

    def decode(self, raw: Tensor, centroid: np.ndarray, angle: np.ndarray) -> Tensor:
        """Raw head outputs ``[B, 8]`` to box parameters ``[B, 7]`` in the sensor frame."""
        centroid = np.asarray(centroid, dtype=np.float64).reshape(-1, 3)
        angle = np.asarray(angle, dtype=np.float64).reshape(-1)
        if self.raw_direct:
            return ad.concat([raw[:, 0:3] + centroid, ad.exp(raw[:, 3:6]), raw[:, 6:7]], axis=1)
        c, s = np.cos(angle)[:, None], np.sin(angle)[:, None]
        ox, oy, oz = raw[:, 0:1], raw[:, 1:2], raw[:, 2:3]
        center = ad.concat([c * ox - s * oy, s * ox + c * oy, oz], axis=1) + centroid
        dims = ad.exp(raw[:, 3:6]) * self.priors
        yaw = ad.atan2(raw[:, 6:7], raw[:, 7:8]) + angle[:, None]
        yaw = ad.atan2(ad.sin(yaw), ad.cos(yaw))
        return ad.concat([center, dims, yaw], axis=1)

    def __call__(self, x, valid: np.ndarray, f_img, centroid: np.ndarray, angle: np.ndarray) -> Tensor:
        return self.decode(self.raw(x, valid, f_img), centroid, angle)


def collate_clouds(clouds: list[EnrichedCloud], m: int, frame: str = "frustum"):
    """Pad clouds to ``m`` rows: ``(x [B, m, 6], valid [B, m], centroid [B, 3], angle [B])``."""
    b = len(clouds)
    x = np.zeros((b, m, IN_DIM))
    valid = np.zeros((b, m), dtype=bool)
    cents = np.zeros((b, 3))
    angles = np.zeros(b)
    for i, cl in enumerate(clouds):
        if len(cl) == 0 or len(cl) > m:
            raise ValueError(f"cloud with {len(cl)} rows does not fit m={m}")
        feats, cents[i], angles[i] = regressor_inputs(cl, frame)
        x[i, : len(cl)] = feats
        valid[i, : len(cl)] = True
    return x, valid, cents, angles


def regress_box(reg: BoxRegressor, cloud: EnrichedCloud, f_img: np.ndarray) -> Tensor:
    """Box parameters ``[7]`` for one cloud (still attached to the graph)."""
    x, valid, cent, ang = collate_clouds([cloud], len(cloud), reg.frame)
    return reg(x, valid, np.asarray(f_img, dtype=np.float64).reshape(1, -1), cent, ang).reshape(7)


def params_to_box(params) -> Box3D:
    p = np.asarray(params.data if isinstance(params, Tensor) else params, dtype=np.float64).reshape(7)
    return Box3D(*(float(v) for v in p[:6]), wrap_angle(float(p[6])))


def box_loss(pred: Tensor, gt) -> Tensor:
    """Mean dIoU loss over the batch (``pred`` ``[B, 7]`` or ``[7]``)."""
    loss = diou_loss(pred, gt)
    return loss.mean() if loss.ndim else loss
