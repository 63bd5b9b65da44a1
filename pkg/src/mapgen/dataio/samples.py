"""Per-object samples: image crop, frustum cloud in crop coordinates, filters."""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass

import numpy as np
from PIL import Image

from ..geometry import Box2D, Box3D, FrustumCloud, extract_frustum, points_in_box, to_crop
from .kitti import KittiObject, Scene

KITTI_FOCAL = 721.5377
# Velodyne files store float32, which moves surface returns by up to ~4e-6 m at 60 m range.
FG_TOLERANCE = 1e-4

# (min box height px at KITTI focal, max occlusion, max truncation)
DIFFICULTY_BINS = (("easy", 40.0, 0, 0.15), ("moderate", 25.0, 1, 0.30), ("hard", 25.0, 2, 0.50))
DIFFICULTIES = ("easy", "moderate", "hard", "ignored")


@dataclass
class ObjectSample:
    scene_id: str
    index: int
    box2d: Box2D
    crop: np.ndarray
    frustum: FrustumCloud
    gt_box3d: Box3D | None
    difficulty: str


def difficulty_of(obj: KittiObject, focal: float = KITTI_FOCAL) -> str:
    """Bin by 2D box height, occlusion and truncation; heights scale with focal length."""
    if obj.box2d is None:
        return "ignored"
    height = obj.box2d.height * KITTI_FOCAL / focal
    for name, min_h, max_occ, max_trunc in DIFFICULTY_BINS:
        if height >= min_h and obj.occluded <= max_occ and obj.truncated <= max_trunc:
            return name
    return "ignored"


def crop_resize(image: np.ndarray, box: Box2D, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resample of ``box`` to ``size = (H, W)``, floats in [0, 1].

    Image coordinates put pixel centers on integers; the crop's pixel ``j`` spans
    ``[j, j + 1)``, which is the convention of :func:`geometry.image_to_crop`.
    """
    h, w = size
    src = Image.fromarray(np.asarray(image, dtype=np.uint8), "RGB")
    edges = (box.xmin + 0.5, box.ymin + 0.5, box.xmax + 0.5, box.ymax + 0.5)
    out = src.resize((w, h), Image.BILINEAR, box=edges)
    return np.asarray(out, dtype=np.float64) / 255.0


class SkipLog:
    """Append-only record of objects that did not become samples."""

    def __init__(self):
        self.entries: list[dict] = []
        self._lock = threading.Lock()

    def add(self, scene_id: str, index: int, reason: str, **info) -> None:
        with self._lock:
            self.entries.append({"scene": scene_id, "object": index, "reason": reason, **info})

    def __len__(self) -> int:
        return len(self.entries)

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.entries:
            out[e["reason"]] = out.get(e["reason"], 0) + 1
        return out

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.entries)


def build_object_samples(scene: Scene, min_points: int = 30, min_fg: int = 5,
                         crop_size: tuple[int, int] = (112, 112), training: bool = True,
                         skip_log: SkipLog | None = None) -> list[ObjectSample]:
    """One sample per labelled 2D box.

    With ``training`` and ground truth present, the foreground mask comes from the
    3D box and objects need ``min_points`` frustum points of which ``min_fg`` are
    foreground. Otherwise a single frustum point suffices.
    """
    h_img, w_img = scene.image.shape[:2]
    cloud = np.asarray(scene.cloud, dtype=np.float64)[:, :3]
    out = []
    for idx, obj in enumerate(scene.targets):
        box = obj.box2d.clamp(w_img, h_img)
        fr = extract_frustum(scene.calib, cloud, box, scene.image)
        gt = obj.box3d
        if training and gt is not None:
            fr.fg_mask = points_in_box(gt, fr.points, eps=FG_TOLERANCE)
            n_fg = int(fr.fg_mask.sum())
            if len(fr) < min_points:
                if skip_log is not None:
                    skip_log.add(scene.id, idx, "too_few_points", points=len(fr))
                continue
            if n_fg < min_fg:
                if skip_log is not None:
                    skip_log.add(scene.id, idx, "too_few_foreground", foreground=n_fg)
                continue
        elif len(fr) < 1:
            if skip_log is not None:
                skip_log.add(scene.id, idx, "empty_frustum")
            continue
        elif gt is not None:
            fr.fg_mask = points_in_box(gt, fr.points, eps=FG_TOLERANCE)
        out.append(ObjectSample(
            scene.id, idx, box, crop_resize(scene.image, box, crop_size),
            to_crop(fr, box, crop_size), gt, difficulty_of(obj, scene.calib.focal),
        ))
    return out
