"""KITTI on-disk formats: velodyne scans, calibration text, label files, images."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..geometry import Box2D, Box3D, Calibration, wrap_angle
from ..autodiff.checkpoint import atomic_write

POINT_BYTES = 16
CALIB_KEYS = {"P2": (3, 4), "R0_rect": (3, 3), "Tr_velo_to_cam": (3, 4)}
IMAGE_EXTS = (".png", ".ppm")


class FormatError(ValueError):
    """A file that does not follow the expected layout."""

    def __init__(self, message: str, path=None, offset: int | None = None, line: int | None = None):
        self.path = None if path is None else str(path)
        self.offset = offset
        self.line = line
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class MissingKeyError(FormatError, KeyError):
    def __init__(self, key: str, path=None):
        self.key = key
        FormatError.__init__(self, f"missing calibration key {key!r}", path)

    __str__ = FormatError.__str__


# -- velodyne ---------------------------------------------------------------

def parse_velodyne(buf: bytes, path=None) -> np.ndarray:
    """Decode little-endian f32 (x, y, z, reflectance) records into an ``n x 4`` array."""
    rem = len(buf) % POINT_BYTES
    if rem:
        raise FormatError(f"truncated point record ({rem} trailing bytes)", path, len(buf) - rem)
    pts = np.frombuffer(buf, dtype="<f4").reshape(-1, 4)
    bad = np.flatnonzero(~np.isfinite(pts).reshape(-1))
    if len(bad):
        raise FormatError("non-finite coordinate", path, int(bad[0]) * 4)
    return pts.astype(np.float32)


def read_velodyne(path) -> np.ndarray:
    return parse_velodyne(Path(path).read_bytes(), path)


def write_velodyne(path, cloud: np.ndarray) -> None:
    cloud = np.asarray(cloud, dtype="<f4").reshape(-1, 4)
    atomic_write(path, cloud.tobytes())


# -- calibration ------------------------------------------------------------

def parse_calib(text: str, path=None) -> Calibration:
    values: dict[str, list[float]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        key, sep, rest = line.partition(":")
        if not sep:
            raise FormatError("expected 'KEY: values'", path, line=lineno)
        try:
            nums = [float(tok) for tok in rest.split()]
        except ValueError as exc:
            raise FormatError(f"bad number in {key.strip()!r}: {exc}", path, line=lineno) from None
        values[key.strip()] = nums
    mats = {}
    for key, shape in CALIB_KEYS.items():
        if key not in values:
            raise MissingKeyError(key, path)
        nums = values[key]
        if len(nums) != shape[0] * shape[1]:
            raise FormatError(f"{key} needs {shape[0] * shape[1]} values, got {len(nums)}", path)
        mats[key] = np.array(nums).reshape(shape)
    try:
        return Calibration(mats["P2"], mats["R0_rect"], mats["Tr_velo_to_cam"])
    except ValueError as exc:
        raise FormatError(str(exc), path) from None


def _read_text(path) -> str:
    try:
        return Path(path).read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("not UTF-8 text", path, exc.start) from None


def read_calib(path) -> Calibration:
    return parse_calib(_read_text(path), path)


def format_calib(calib: Calibration) -> str:
    def row(m):
        return " ".join(f"{v:.12e}" for v in np.asarray(m).reshape(-1))

    p = row(calib.P)
    return (f"P0: {p}\nP1: {p}\nP2: {p}\nP3: {p}\nR0_rect: {row(calib.R_rect)}\n"
            f"Tr_velo_to_cam: {row(calib.T_lidar_to_cam)}\nTr_imu_to_velo: {row(np.eye(3, 4))}\n")


def write_calib(path, calib: Calibration) -> None:
    atomic_write(path, format_calib(calib).encode("utf-8"))


# -- box conventions ----------------------------------------------------------

def kitti_to_box3d(calib: Calibration, hwl, loc, ry: float) -> Box3D:
    """Camera-frame bottom-center location and ``rotation_y`` to an internal box."""
    h, w, l = (float(v) for v in hwl)
    bottom = calib.rect_to_lidar(np.asarray(loc, dtype=np.float64))[0]
    heading_rect = np.array([math.cos(ry), 0.0, -math.sin(ry)])
    heading = calib.rect_to_lidar(heading_rect) - calib.rect_to_lidar(np.zeros(3))
    yaw = wrap_angle(math.atan2(heading[0, 1], heading[0, 0]))
    return Box3D(float(bottom[0]), float(bottom[1]), float(bottom[2]) + 0.5 * h, h, l, w, yaw)


def box3d_to_kitti(calib: Calibration, box: Box3D) -> tuple[tuple[float, float, float], np.ndarray, float]:
    """Inverse of :func:`kitti_to_box3d`: ``((h, w, l), location, rotation_y)``."""
    loc = calib.lidar_to_rect(np.array([box.cx, box.cy, box.cz - 0.5 * box.h]))[0]
    heading = (calib.lidar_to_rect(np.array([math.cos(box.yaw), math.sin(box.yaw), 0.0]))
               - calib.lidar_to_rect(np.zeros(3)))[0]
    ry = wrap_angle(math.atan2(-heading[2], heading[0]))
    return (box.h, box.w, box.l), loc, ry


def observation_angle(loc, ry: float) -> float:
    return wrap_angle(ry - math.atan2(loc[0], loc[2]))


# -- labels -------------------------------------------------------------------

@dataclass
class KittiObject:
    type: str
    box2d: Box2D | None
    box3d: Box3D | None
    truncated: float = 0.0
    occluded: int = 0
    alpha: float | None = None
    score: float | None = None


def _parse_label_line(line: str, calib: Calibration | None, path, lineno: int) -> KittiObject:
    tok = line.split()
    if len(tok) not in (15, 16):
        raise FormatError(f"expected 15 or 16 fields, got {len(tok)}", path, line=lineno)
    try:
        nums = [float(t) for t in tok[1:]]
    except ValueError as exc:
        raise FormatError(str(exc), path, line=lineno) from None
    if not all(math.isfinite(v) for v in nums):
        raise FormatError("non-finite label field", path, line=lineno)
    trunc, occ, alpha = nums[0], nums[1], nums[2]
    if occ != int(occ):
        raise FormatError(f"occlusion level must be an integer, got {tok[2]}", path, line=lineno)
    x0, y0, x1, y1 = nums[3:7]
    box2d = Box2D(x0, y0, x1, y1) if (x0 < x1 and y0 < y1) else None
    h, w, l = nums[7:10]
    loc, ry = nums[10:13], nums[13]
    box3d = None
    if tok[0] != "DontCare" and min(h, w, l) > 0 and calib is not None:
        try:
            box3d = kitti_to_box3d(calib, (h, w, l), loc, ry)
        except ValueError as exc:
            raise FormatError(str(exc), path, line=lineno) from None
    score = nums[14] if len(nums) == 15 else None
    return KittiObject(tok[0], box2d, box3d, trunc, int(occ), alpha, score)


def parse_label(text: str, calib: Calibration | None, path=None) -> list[KittiObject]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        if raw.strip():
            out.append(_parse_label_line(raw, calib, path, lineno))
    return out


def read_label(path, calib: Calibration | None) -> list[KittiObject]:
    return parse_label(_read_text(path), calib, path)


def _as_object(entry) -> KittiObject:
    if isinstance(entry, KittiObject):
        return entry
    box3d, box2d, score = entry
    return KittiObject("Car", box2d, box3d, score=score)


def format_label_line(obj: KittiObject, calib: Calibration) -> str:
    b2 = obj.box2d.as_array() if obj.box2d is not None else np.array([-1.0, -1.0, -1.0, -1.0])
    if obj.box3d is None:
        hwl, loc, ry = (-1.0, -1.0, -1.0), np.array([-1000.0, -1000.0, -1000.0]), -10.0
        alpha = -10.0 if obj.alpha is None else obj.alpha
    else:
        hwl, loc, ry = box3d_to_kitti(calib, obj.box3d)
        alpha = observation_angle(loc, ry) if obj.alpha is None else obj.alpha
    fields = [obj.type, f"{obj.truncated:.6f}", str(int(obj.occluded)), f"{alpha:.6f}"]
    fields += [f"{v:.6f}" for v in b2]
    fields += [f"{v:.6f}" for v in (*hwl, *loc, ry)]
    if obj.score is not None:
        fields.append(f"{obj.score:.6f}")
    return " ".join(fields)


def save_kitti_label(boxes, calib: Calibration, path) -> None:
    """Write label lines for ``KittiObject`` entries or ``(Box3D, Box2D, score)`` tuples."""
    lines = [format_label_line(_as_object(e), calib) for e in boxes]
    atomic_write(path, "".join(line + "\n" for line in lines).encode("utf-8"))


# -- images -------------------------------------------------------------------

def read_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except OSError as exc:
        raise FormatError(f"unreadable image: {exc}", path) from None


def write_ppm(path, image: np.ndarray) -> None:
    import io

    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8), "RGB").save(buf, format="PPM")
    atomic_write(path, buf.getvalue())


# -- scenes -------------------------------------------------------------------

@dataclass
class Scene:
    id: str
    image: np.ndarray
    cloud: np.ndarray
    calib: Calibration
    objects: list[KittiObject] = field(default_factory=list)
    classes: tuple[str, ...] = ("Car",)

    def __post_init__(self):
        if not np.all(np.isfinite(self.cloud)):
            raise ValueError(f"scene {self.id}: non-finite cloud")

    @property
    def targets(self) -> list[KittiObject]:
        """Labelled objects of the handled classes that carry a usable 2D box."""
        return [o for o in self.objects if o.type in self.classes and o.box2d is not None]

    @property
    def boxes2d(self) -> list[Box2D]:
        h, w = self.image.shape[:2]
        return [o.box2d.clamp(w, h) for o in self.targets]

    @property
    def gt_boxes3d(self) -> list[Box3D] | None:
        boxes = [o.box3d for o in self.targets]
        return None if any(b is None for b in boxes) else boxes


def find_image(root, scene_id: str) -> Path:
    for ext in IMAGE_EXTS:
        p = Path(root) / "image_2" / f"{scene_id}{ext}"
        if p.exists():
            return p
    raise FileNotFoundError(f"no image for scene {scene_id} under {Path(root) / 'image_2'}")


def load_kitti_scene(root, scene_id: str, with_labels: bool = True) -> Scene:
    root = Path(root)
    calib = read_calib(root / "calib" / f"{scene_id}.txt")
    cloud = read_velodyne(root / "velodyne" / f"{scene_id}.bin")
    image = read_image(find_image(root, scene_id))
    label_path = root / "label_2" / f"{scene_id}.txt"
    objects = read_label(label_path, calib) if with_labels and label_path.exists() else []
    return Scene(scene_id, image, cloud, calib, objects)


def list_scene_ids(root) -> list[str]:
    vdir = Path(root) / "velodyne"
    if not vdir.is_dir():
        return []
    return sorted(p.stem for p in vdir.iterdir() if p.suffix == ".bin")


def save_scene(root, scene: Scene) -> None:
    root = Path(root)
    for sub in ("image_2", "velodyne", "calib", "label_2"):
        os.makedirs(root / sub, exist_ok=True)
    write_ppm(root / "image_2" / f"{scene.id}.ppm", scene.image)
    write_velodyne(root / "velodyne" / f"{scene.id}.bin", scene.cloud)
    write_calib(root / "calib" / f"{scene.id}.txt", scene.calib)
    save_kitti_label(scene.objects, scene.calib, root / "label_2" / f"{scene.id}.txt")
