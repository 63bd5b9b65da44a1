"""Model- and file-level evaluation, the ablation table and report rendering."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..boxreg import params_to_box
from ..dataio import ObjectSample, difficulty_of, read_calib, read_label
from ..geometry import Box2D, Calibration
from ..pointgen import mask_and_recover_loss, mask_sample
from ..training import MapGenModel, infer, load_model, run_segmentation
from ..training.pipeline import batches
from .metrics import (
    DIFFICULTY_ORDER,
    RECALL_IOU,
    AlignmentError,
    Detection,
    GroundTruth,
    ap_table,
    match_objects,
    quality_from_matches,
)

EVAL_MASK_RATIO = 0.3
NEAR_DEPTH = 20.0


@dataclass
class EvalReport:
    ap_3d: dict
    ap_bev: dict
    miou: float | None
    recall: float | None
    merr: float | None
    counts: dict
    fingerprint: str
    merr_near: float | None = None
    merr_unit: str = "m"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def recovery_pass(model: MapGenModel, samples: list[ObjectSample], seed: int = 0,
                  ratio: float = EVAL_MASK_RATIO, batch_size: int = 32):
    """Mask-and-recover on held-out samples: per masked point, error (m) and true forward depth."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 5]))
    segs = run_segmentation(model, samples, rng, batch_size)
    cfg = model.cfg
    masked = []
    for s, sg in zip(samples, segs):
        if s.frustum.fg_mask is None:
            continue
        rows = sg.prime_rows(cfg.fg_threshold)
        fr = s.frustum
        ms = mask_sample(fr.points[rows], fr.projections[rows], fr.fg_mask[rows], sg.image_prob, sg.feat,
                         s.crop.shape[:2], cfg.m_points, ratio, rng)
        if ms is not None and len(ms.masked):
            masked.append(ms)
    errs, depths = [np.zeros(0)], [np.zeros(0)]
    for sl in batches(len(masked), batch_size):
        chunk = masked[sl]
        errs.append(mask_and_recover_loss(model.gen, chunk)[1])
        depths.extend(ms.seq.frame.denormalize(ms.truth)[:, 0] for ms in chunk)
    return np.concatenate(errs), np.concatenate(depths)


def _mean_or_none(x: np.ndarray) -> float | None:
    return float(x.mean()) if len(x) else None


def evaluate_model(model: MapGenModel, samples: list[ObjectSample], seed: int = 0, points: int = 40,
                   batch_size: int = 32, with_recovery: bool | None = None) -> EvalReport:
    """Pseudo labels for ``samples`` against their ground-truth boxes."""
    samples = [s for s in samples if s.gt_box3d is not None]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))
    boxes = infer(model, samples, rng, batch_size).boxes if samples else np.zeros((0, 7))
    pseudo = {(s.scene_id, s.index): params_to_box(b) for s, b in zip(samples, boxes)}
    gt = {(s.scene_id, s.index): s.gt_box3d for s in samples}
    matches = match_objects(pseudo, gt)
    miou, recall = quality_from_matches(matches)
    dets = [Detection(s.scene_id, pseudo[(s.scene_id, s.index)], 1.0) for s in samples]
    gts = [GroundTruth(s.scene_id, s.gt_box3d, s.difficulty) for s in samples]
    aps = ap_table(dets, gts, 0.7, points)
    merr = merr_near = None
    if with_recovery is None:
        with_recovery = model.cfg.generation
    n_masked = 0
    if with_recovery:
        errs, depths = recovery_pass(model, samples, seed, batch_size=batch_size)
        merr, merr_near, n_masked = _mean_or_none(errs), _mean_or_none(errs[depths <= NEAR_DEPTH]), len(errs)
    counts = {"objects": len(samples), "masked_points": n_masked,
              "recall_hits": int(sum(m.iou3d >= RECALL_IOU for m in matches))}
    fp = fingerprint({"model": asdict(model.cfg), "seed": seed, "points": points})
    return EvalReport(aps["3d"], aps["bev"], miou, recall, merr, counts, fp, merr_near,
                      extra={"per_object": [[*m.key, m.iou3d, m.iou_bev] for m in matches]})


ABLATION_VARIANTS = ("full", "no-generation", "sinusoid", "no-pos-emb", "add", "gating", "symmetric")


def ablation_run(samples: list[ObjectSample], variants: dict, seed: int = 0, batch_size: int = 32) -> list[dict]:
    """One row per requested variant (name -> checkpoint path or loaded model).

    A missing checkpoint gives a row marked absent. mErr is absent for variants
    without generation.
    """
    rows = []
    for name, ref in variants.items():
        if isinstance(ref, MapGenModel):
            model = ref
        elif ref is not None and Path(ref).exists():
            model = load_model(ref, need=("seg", "box"))
        else:
            rows.append({"variant": name, "absent": True, "mErr": None, "mIoU": None, "recall": None})
            continue
        rep = evaluate_model(model, samples, seed, batch_size=batch_size)
        rows.append({"variant": name, "absent": False, "mErr": rep.merr, "mIoU": rep.miou,
                     "recall": rep.recall, "fingerprint": rep.fingerprint})
    return rows


def _cell(v, scale: float = 1.0, digits: int = 2) -> str:
    return "-" if v is None else f"{v * scale:.{digits}f}"


def ablation_table(rows: list[dict]) -> str:
    """Aligned text with columns mErr (m), mIoU and Recall 0.7 (both x100)."""
    header = ("Variant", "mErr", "mIoU", "Recall 0.7")
    body = [(r["variant"], "absent" if r["absent"] else _cell(r["mErr"], 1.0, 4),
             "absent" if r["absent"] else _cell(r["mIoU"], 100.0),
             "absent" if r["absent"] else _cell(r["recall"], 100.0)) for r in rows]
    return _align([header, *body])


def report_table(rep: EvalReport) -> str:
    lines = [_align([("Metric", *DIFFICULTY_ORDER),
                     ("AP_3D@0.7", *(_cell(rep.ap_3d[d]) for d in DIFFICULTY_ORDER)),
                     ("AP_BEV@0.7", *(_cell(rep.ap_bev[d]) for d in DIFFICULTY_ORDER))])]
    lines.append(_align([("mErr (m)", "mIoU", "Recall 0.7"),
                         (_cell(rep.merr, 1.0, 4), _cell(rep.miou, 100.0), _cell(rep.recall, 100.0))]))
    lines.append(f"objects: {rep.counts.get('objects', 0)}  fingerprint: {rep.fingerprint}")
    return "\n\n".join(lines) + "\n"


def _align(rows) -> str:
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w)
                               for i, (c, w) in enumerate(zip(r, widths))).rstrip() for r in rows)


# -- label directories ---------------------------------------------------------

def canonical_calibration() -> Calibration:
    """Axis permutation between the camera and sensor frames with no offsets.

    Both pseudo and gt boxes go through the same rigid map, so overlaps do not depend
    on which calibration is used to read them.
    """
    t = np.array([[0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0], [1.0, 0.0, 0.0, 0.0]])
    p = np.array([[721.5377, 0.0, 609.5593, 0.0], [0.0, 721.5377, 172.854, 0.0], [0.0, 0.0, 1.0, 0.0]])
    return Calibration(p, np.eye(3), t)


def _label_dir(root: Path) -> Path:
    return root / "label_2" if (root / "label_2").is_dir() else root


def _box2d_iou(a: Box2D, b: Box2D) -> float:
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.width * a.height + b.width * b.height - inter)


def align_label_dirs(pred_root, gt_root, classes=("Car",)):
    """Pair each pseudo label with the gt object of the same frame whose 2D box it
    reproduces (2D IoU >= 0.5, best first). gt objects with no pseudo label are
    returned separately rather than scored."""
    pred_dir, gt_dir = _label_dir(Path(pred_root)), _label_dir(Path(gt_root))
    canon = canonical_calibration()
    pseudo, gt, dets, gts, unlabeled = {}, {}, [], [], []
    pred_orphans = []
    frames = sorted({p.stem for p in pred_dir.glob("*.txt")} | {p.stem for p in gt_dir.glob("*.txt")})
    for frame in frames:
        calib_path = Path(gt_root) / "calib" / f"{frame}.txt"
        focal = read_calib(calib_path).focal if calib_path.exists() else canon.focal
        g_objs = read_label(gt_dir / f"{frame}.txt", canon) if (gt_dir / f"{frame}.txt").exists() else []
        p_objs = read_label(pred_dir / f"{frame}.txt", canon) if (pred_dir / f"{frame}.txt").exists() else []
        g_objs = [(i, o) for i, o in enumerate(g_objs) if o.type in classes]
        for i, o in g_objs:
            gts.append(GroundTruth(frame, o.box3d, difficulty_of(o, focal)))
        taken = set()
        for k, p in enumerate(o for o in p_objs if o.type in classes):
            if p.box3d is None:
                continue
            dets.append(Detection(frame, p.box3d, 1.0 if p.score is None else p.score))
            cands = sorted(((_box2d_iou(p.box2d, o.box2d), i) for i, o in g_objs
                            if i not in taken and o.box2d is not None and o.box3d is not None),
                           reverse=True) if p.box2d is not None else []
            if not cands or cands[0][0] < 0.5:
                pred_orphans.append((frame, k))
                continue
            i = cands[0][1]
            taken.add(i)
            pseudo[(frame, i)] = p.box3d
            gt[(frame, i)] = dict(g_objs)[i].box3d
        unlabeled.extend((frame, i) for i, o in g_objs if i not in taken and o.box3d is not None)
    return pseudo, gt, dets, gts, unlabeled, pred_orphans


def evaluate_label_dirs(pred_root, gt_root, points: int = 40) -> EvalReport:
    pseudo, gt, dets, gts, unlabeled, orphans = align_label_dirs(pred_root, gt_root)
    if orphans:
        raise AlignmentError(orphans, [])
    matches = match_objects(pseudo, gt)
    miou, recall = quality_from_matches(matches)
    aps = ap_table(dets, gts, 0.7, points)
    counts = {"objects": len(matches), "unlabeled_gt": len(unlabeled), "detections": len(dets),
              "recall_hits": int(sum(m.iou3d >= RECALL_IOU for m in matches))}
    fp = fingerprint({"pred": str(pred_root), "gt": str(gt_root), "points": points})
    return EvalReport(aps["3d"], aps["bev"], miou, recall, None, counts, fp)
