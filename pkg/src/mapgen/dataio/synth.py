"""Synthetic driving scenes in the KITTI schema.

Cars and clutter are cuboids resting on a flat ground plane. The scan comes from
ray casting a regular azimuth x elevation grid from the sensor origin (first hit
wins), and the image is a painter's-order render of shaded faces over a textured
background, seen from a camera mounted next to the sensor.
"""
from __future__ import annotations

import colorsys
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .. import _kernels
from ..autodiff.checkpoint import atomic_write
from ..geometry import Box2D, Box3D, Calibration, box_corners
from .kitti import KittiObject, Scene, save_scene

# Faces as corner indices (see geometry.box_corners) with their local outward normal.
_FACES = (
    ((0, 1, 2, 3), (0.0, 0.0, -1.0)),
    ((4, 5, 6, 7), (0.0, 0.0, 1.0)),
    ((0, 1, 5, 4), (1.0, 0.0, 0.0)),
    ((1, 2, 6, 5), (0.0, 1.0, 0.0)),
    ((2, 3, 7, 6), (-1.0, 0.0, 0.0)),
    ((3, 0, 4, 7), (0.0, -1.0, 0.0)),
)
_LIGHT = np.array([0.3, 0.5, 1.0]) / np.linalg.norm([0.3, 0.5, 1.0])


class ConfigError(ValueError):
    pass


@dataclass
class SynthConfig:
    image_width: int = 400
    image_height: int = 128
    focal: float = 200.0
    principal: tuple[float, float] = (200.0, 40.0)
    stereo_offset: float = 0.06
    rect_yaw: float = 0.004
    camera_position: tuple[float, float, float] = (0.27, 0.0, 0.08)
    lidar_height: float = 1.73
    cars: tuple[int, int] = (1, 6)
    clutter: tuple[int, int] = (0, 4)
    depth_range: tuple[float, float] = (5.0, 40.0)
    half_fov_deg: float = 44.0
    car_dims: tuple[float, float, float] = (1.5, 3.9, 1.6)
    dim_jitter: float = 0.2
    ground_clearance: float = 0.03
    min_gap: float = 0.5
    beams: int = 24
    elevation_deg: tuple[float, float] = (-22.0, 2.0)
    azimuth_deg: tuple[float, float] = (-50.0, 50.0)
    azimuth_step_deg: float = 0.5
    max_range: float = 80.0
    image_noise: float = 6.0

    def validate(self) -> "SynthConfig":
        for name in ("cars", "clutter", "depth_range", "elevation_deg", "azimuth_deg"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigError(f"{name}: empty range [{lo}, {hi}]")
        if self.cars[0] < 0 or self.clutter[0] < 0:
            raise ConfigError("object counts must be non-negative")
        if self.depth_range[0] <= 1.0:
            raise ConfigError("depth_range must start beyond 1 m")
        if self.beams < 1 or self.azimuth_step_deg <= 0:
            raise ConfigError("scan grid must have at least one ray")
        if self.image_width < 8 or self.image_height < 8 or self.focal <= 0:
            raise ConfigError("image must be at least 8x8 with positive focal length")
        if not 0 <= self.dim_jitter < 1:
            raise ConfigError("dim_jitter must lie in [0, 1)")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        names = set(cls.__dataclass_fields__)
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown synth keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw).validate()


def default_calibration(cfg: SynthConfig) -> Calibration:
    f, (cx, cy) = cfg.focal, cfg.principal
    P = np.array([[f, 0.0, cx, f * cfg.stereo_offset], [0.0, f, cy, 0.0], [0.0, 0.0, 1.0, 0.0]])
    c, s = math.cos(cfg.rect_yaw), math.sin(cfg.rect_yaw)
    R_rect = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    rot = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    T = np.column_stack([rot, -rot @ np.asarray(cfg.camera_position, dtype=np.float64)])
    return Calibration(P, R_rect, T)


def camera_center(calib: Calibration) -> np.ndarray:
    """Optical center in the LiDAR frame (null space of the full projection)."""
    rect = -np.linalg.solve(calib.P[:, :3], calib.P[:, 3])
    return calib.rect_to_lidar(rect)[0]


def scan_directions(cfg: SynthConfig) -> np.ndarray:
    elev = np.deg2rad(np.linspace(cfg.elevation_deg[0], cfg.elevation_deg[1], cfg.beams))
    az0, az1 = cfg.azimuth_deg
    n_az = int(math.floor((az1 - az0) / cfg.azimuth_step_deg + 1e-9)) + 1
    az = np.deg2rad(az0 + cfg.azimuth_step_deg * np.arange(n_az))
    e, a = np.meshgrid(elev, az, indexing="ij")
    return np.stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], axis=-1).reshape(-1, 3)


def _place(rng, cfg: SynthConfig, placed: list[np.ndarray], dims_fn, tries: int = 200) -> np.ndarray | None:
    ground = -cfg.lidar_height
    for _ in range(tries):
        h, l, w = dims_fn()
        depth = rng.uniform(*cfg.depth_range)
        lat = depth * math.tan(math.radians(cfg.half_fov_deg))
        y = rng.uniform(-lat, lat)
        yaw = rng.uniform(-math.pi, math.pi)
        box = np.array([depth, y, ground + cfg.ground_clearance + 0.5 * h, h, l, w, yaw])
        grown = box.copy()
        grown[4:6] += cfg.min_gap
        if all(_kernels.bev_intersection(grown, other) <= 0.0 for other in placed):
            return box
    return None


def _hsv(h, s, v) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(h, s, v)) * 255.0


def _render(cfg: SynthConfig, calib: Calibration, boxes: np.ndarray, colors: list[np.ndarray], rng):
    """Returns the RGB image, the per-pixel object id map (-1 = background) and per-box
    silhouettes rendered in isolation."""
    W, H = cfg.image_width, cfg.image_height
    cy = cfg.principal[1]
    rows = np.arange(H, dtype=np.float64)[:, None]
    sky = np.array([190.0, 196.0, 204.0]) - 0.4 * rows
    coarse = rng.normal(0.0, 1.0, (H // 8 + 1, W // 8 + 1))
    tex = np.asarray(Image.fromarray(coarse.astype(np.float32), "F").resize((W, H), Image.BILINEAR))
    ground = np.array([112.0, 108.0, 100.0]) + 12.0 * tex[:, :, None]
    img = np.where((rows > cy)[:, :, None], ground, np.broadcast_to(sky[:, None, :], (H, W, 3)))
    canvas = Image.fromarray(np.clip(img, 0, 255).astype(np.uint8), "RGB")
    ids = Image.new("I", (W, H), -1)
    draw, draw_ids = ImageDraw.Draw(canvas), ImageDraw.Draw(ids)
    cam = camera_center(calib)
    order = np.argsort(-np.linalg.norm(boxes[:, :3] - cam, axis=1), kind="stable")
    polys: list[list[list[tuple[float, float]]]] = [[] for _ in range(len(boxes))]
    for k in order:
        b = Box3D.from_array(boxes[k])
        corners = box_corners(b)
        uv, _ = calib.rect_to_image(calib.lidar_to_rect(corners))
        c, s = math.cos(b.yaw), math.sin(b.yaw)
        for idx, n_local in _FACES:
            n = np.array([c * n_local[0] - s * n_local[1], s * n_local[0] + c * n_local[1], n_local[2]])
            if float(n @ (corners[list(idx)].mean(axis=0) - cam)) >= 0.0:
                continue
            shade = 0.5 + 0.5 * max(float(n @ _LIGHT), 0.0)
            fill = tuple(int(v) for v in np.clip(colors[k] * shade, 0, 255))
            poly = [(float(uv[i, 0]), float(uv[i, 1])) for i in idx]
            draw.polygon(poly, fill=fill)
            draw_ids.polygon(poly, fill=int(k))
            polys[k].append(poly)
    rgb = np.asarray(canvas, dtype=np.float64) + rng.normal(0.0, cfg.image_noise, (H, W, 3))
    id_map = np.asarray(ids, dtype=np.int64)
    alone = []
    for k in range(len(boxes)):
        mask = Image.new("1", (W, H), 0)
        d = ImageDraw.Draw(mask)
        for poly in polys[k]:
            d.polygon(poly, fill=1)
        alone.append(int(np.count_nonzero(np.asarray(mask))))
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8), id_map, alone


def _truncation(calib: Calibration, box: np.ndarray, W: int, H: int) -> float:
    uv, _ = calib.rect_to_image(calib.lidar_to_rect(box_corners(Box3D.from_array(box))))
    x0, y0 = uv.min(axis=0)
    x1, y1 = uv.max(axis=0)
    full = (x1 - x0) * (y1 - y0)
    cx0, cy0 = max(x0, -0.5), max(y0, -0.5)
    cx1, cy1 = min(x1, W - 0.5), min(y1, H - 0.5)
    inside = max(cx1 - cx0, 0.0) * max(cy1 - cy0, 0.0)
    return float(np.clip(1.0 - inside / full, 0.0, 1.0)) if full > 0 else 1.0


@dataclass
class SynthTruth:
    """Generator-side bookkeeping that has no place in the KITTI files."""

    boxes: np.ndarray
    is_car: np.ndarray
    hit: np.ndarray
    tally: list[int] = field(default_factory=list)
    labelled: list[int] = field(default_factory=list)


def generate_synthetic_scene(rng: np.random.Generator, config: SynthConfig | None = None,
                             scene_id: str = "000000", return_truth: bool = False):
    """Sample one scene. With ``return_truth`` also returns a :class:`SynthTruth`.

    ``truth.labelled[j]`` is the box index of ``scene.objects[j]`` and
    ``truth.tally[j]`` its number of scan returns.
    """
    cfg = (config or SynthConfig()).validate()
    calib = default_calibration(cfg)
    mean = np.asarray(cfg.car_dims)

    def car_dims():
        return mean * rng.uniform(1 - cfg.dim_jitter, 1 + cfg.dim_jitter, 3)

    def clutter_dims():
        return np.array([rng.uniform(0.5, 2.5), rng.uniform(0.4, 3.0), rng.uniform(0.4, 3.0)])

    placed: list[np.ndarray] = []
    colors: list[np.ndarray] = []
    reflect: list[float] = []
    n_cars = int(rng.integers(cfg.cars[0], cfg.cars[1] + 1))
    for _ in range(n_cars):
        box = _place(rng, cfg, placed, car_dims)
        if box is None:
            break
        placed.append(box)
        colors.append(_hsv(rng.uniform(), rng.uniform(0.55, 0.9), rng.uniform(0.45, 0.9)))
        reflect.append(rng.uniform(0.4, 0.8))
    n_real_cars = len(placed)
    for _ in range(int(rng.integers(cfg.clutter[0], cfg.clutter[1] + 1))):
        box = _place(rng, cfg, placed, clutter_dims)
        if box is None:
            break
        placed.append(box)
        colors.append(_hsv(rng.uniform(), rng.uniform(0.0, 0.12), rng.uniform(0.3, 0.8)))
        reflect.append(rng.uniform(0.05, 0.4))
    boxes = np.array(placed).reshape(-1, 7)

    dirs = scan_directions(cfg)
    t, hit = _kernels.raycast(np.zeros(3), dirs, boxes, -cfg.lidar_height, cfg.max_range)
    keep = hit != _kernels.NO_HIT
    pts = dirs[keep] * t[keep, None]
    hit = hit[keep]
    table = np.append(np.asarray(reflect, dtype=np.float64), 0.15)  # ground hits index -1
    refl = np.clip(table[hit] + rng.normal(0.0, 0.02, len(hit)), 0.0, 1.0)
    cloud = np.column_stack([pts, refl])

    image, id_map, alone = _render(cfg, calib, boxes, colors, rng)
    W, H = cfg.image_width, cfg.image_height
    objects, tally, labelled = [], [], []
    for k in range(n_real_cars):
        rows, cols = np.nonzero(id_map == k)
        if len(rows) == 0 or cols.max() == cols.min() or rows.max() == rows.min():
            continue
        box2d = Box2D(float(cols.min()) - 0.5, float(rows.min()) - 0.5,
                      float(cols.max()) + 0.5, float(rows.max()) + 0.5).clamp(W, H)
        ratio = len(rows) / max(alone[k], 1)
        occluded = 0 if ratio >= 0.8 else (1 if ratio >= 0.4 else 2)
        objects.append(KittiObject("Car", box2d, Box3D.from_array(boxes[k]),
                                   truncated=_truncation(calib, boxes[k], W, H), occluded=occluded))
        tally.append(int(np.count_nonzero(hit == k)))
        labelled.append(k)
    scene = Scene(scene_id, image, cloud, calib, objects)
    if not return_truth:
        return scene
    is_car = np.arange(len(boxes)) < n_real_cars
    return scene, SynthTruth(boxes, is_car, hit, tally, labelled)


def scene_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def make_splits(ids: list[str], seed: int, train_frac: float = 0.8, subset: int = 500) -> dict:
    """Seeded shuffle; the training subset is the first ``subset`` ids of the shuffled train split."""
    perm = [ids[i] for i in np.random.default_rng(np.random.SeedSequence([seed, 7919])).permutation(len(ids))]
    n_train = int(round(train_frac * len(ids)))
    train = perm[:n_train]
    return {"train": sorted(train), "val": sorted(perm[n_train:]), "train_subset": sorted(train[:subset])}


def write_manifest(root, manifest: dict) -> None:
    atomic_write(Path(root) / "manifest.json", (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())


def read_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    return json.loads(path.read_text()) if path.exists() else {}


def write_synthetic_dataset(root, n_scenes: int, seed: int, config: SynthConfig | None = None) -> dict:
    cfg = (config or SynthConfig()).validate()
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    ids = [f"{i:06d}" for i in range(n_scenes)]
    for i, sid in enumerate(ids):
        save_scene(root, generate_synthetic_scene(scene_rng(seed, i), cfg, sid))
    manifest = {
        "kind": "synthetic",
        "seed": seed,
        "num_scenes": n_scenes,
        "splits": make_splits(ids, seed),
        "synth": asdict(cfg),
        "filter_counts": {},
    }
    write_manifest(root, manifest)
    return manifest
