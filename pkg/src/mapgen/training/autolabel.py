"""Relabel a dataset with pseudo 3D boxes from trained checkpoints."""
from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from ..autodiff.checkpoint import atomic_write
from ..boxreg import params_to_box
from ..dataio import FormatError, SkipLog, build_object_samples, load_kitti_scene, save_kitti_label
from .data import split_ids
from .models import MapGenModel
from .pipeline import infer

PSEUDO_SCORE = 1.0


def autolabel(model: MapGenModel, data_root, out_dir, seed: int = 0, split: str = "all",
              batch_size: int = 32, log=None) -> dict:
    """Write one label file per readable frame under ``out_dir/label_2`` and a summary.

    Objects without frustum points go to ``skipped.jsonl``; frames that cannot be
    read (missing calibration, corrupt files) are listed under ``errors``.
    """
    t0 = time.perf_counter()
    out_dir = Path(out_dir)
    label_dir = out_dir / "label_2"
    label_dir.mkdir(parents=True, exist_ok=True)
    skip = SkipLog()
    errors = []
    scenes, samples = [], []
    boxes_in = 0
    for sid in split_ids(data_root, split):
        try:
            scene = load_kitti_scene(data_root, sid)
        except (OSError, FormatError, ValueError) as exc:
            errors.append({"scene": sid, "error": f"{type(exc).__name__}: {exc}"})
            continue
        boxes_in += len(scene.targets)
        scenes.append(scene)
        samples.append(build_object_samples(scene, crop_size=model.cfg.crop, training=False, skip_log=skip))

    flat = [s for group in samples for s in group]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))
    boxes = infer(model, flat, rng, batch_size).boxes if flat else np.zeros((0, 7))
    pos = 0
    for scene, group in zip(scenes, samples):
        entries = [(params_to_box(boxes[pos + i]), s.box2d, PSEUDO_SCORE) for i, s in enumerate(group)]
        pos += len(group)
        save_kitti_label(entries, scene.calib, label_dir / f"{scene.id}.txt")

    summary = {
        "frames": len(scenes),
        "frame_errors": len(errors),
        "boxes_in": boxes_in,
        "kept": len(flat),
        "skipped": len(skip),
        "skip_reasons": skip.counts(),
        "errors": errors,
        "seconds": round(time.perf_counter() - t0, 3),
    }
    atomic_write(out_dir / "skipped.jsonl", skip.to_jsonl().encode())
    atomic_write(out_dir / "summary.json", (json.dumps(summary, indent=2, sort_keys=True) + "\n").encode())
    if log is not None:
        log(f"autolabel: {summary['frames']} frames, kept {summary['kept']}, skipped {summary['skipped']}, "
            f"frame errors {summary['frame_errors']}")
    return summary
