"""Scene ids per split and object samples for training and labeling."""
from __future__ import annotations

from pathlib import Path

from ..dataio import SkipLog, build_object_samples, list_scene_ids, load_kitti_scene, read_manifest

SPLITS = ("train", "val", "all")


def split_ids(root, split: str = "train") -> list[str]:
    """``train`` is the seeded training subset recorded in the manifest, ``val`` the
    held-out split; without a manifest every scene belongs to both."""
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    ids = list_scene_ids(root)
    splits = read_manifest(root).get("splits")
    if split == "all" or not splits:
        return ids
    key = "train_subset" if split == "train" else "val"
    present = set(ids)
    return [i for i in splits[key] if i in present]


def load_samples(root, split: str = "train", crop=(112, 112), min_points: int = 30, min_fg: int = 5,
                 training: bool = True, skip_log: SkipLog | None = None):
    root = Path(root)
    if not (root / "velodyne").is_dir():
        raise FileNotFoundError(f"{root} is not a dataset directory (no velodyne/)")
    out = []
    for sid in split_ids(root, split):
        scene = load_kitti_scene(root, sid)
        out.extend(build_object_samples(scene, min_points, min_fg, tuple(crop), training, skip_log))
    return out
