"""Three-stage training with frozen upstream networks, resumable per epoch."""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff import Adam, Tensor, load_checkpoint, save_checkpoint
from ..autodiff.checkpoint import atomic_write
from ..boxreg import box_loss, collate_clouds
from ..dataio import ObjectSample
from ..pointgen import mask_and_recover_loss, mask_sample
from ..segmentation import seg_loss
from .config import LrSchedule, TrainConfig
from .data import load_samples
from .models import STAGE_ORDER, MapGenModel, StageDependencyError, required_stages, save_model
from .pipeline import batches, enrich, run_segmentation, seg_arrays

STAGE_INDEX = {"seg": 1, "gen": 2, "box": 3}
CACHE_EPOCH = 1_000_000  # RNG stream index for the frozen-upstream caches


@dataclass
class TrainingReport:
    stage: str
    epochs_run: int
    completed: bool
    losses: list[float]
    seconds: float
    samples: int
    checkpoint: str
    metrics_path: str
    extra: dict = field(default_factory=dict)


def state_dir(ckpt_out) -> Path:
    return Path(str(ckpt_out) + ".state")


def metrics_path(ckpt_out) -> Path:
    return Path(str(ckpt_out) + ".metrics.jsonl")


def epoch_rng(seed: int, stage: str, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, STAGE_INDEX[stage], epoch]))


class _SegTask:
    def __init__(self, model: MapGenModel, samples: list[ObjectSample]):
        self.model = model
        self.items = samples

    def loss(self, batch: list[ObjectSample], rng) -> Tensor:
        x, valid, uv, labels, _ = seg_arrays(batch, self.model.cfg.n_points, rng)
        pl = self.model.seg_points(x, valid)
        il, _, _ = self.model.seg_image(np.stack([s.crop for s in batch]))
        return seg_loss(pl, il, labels, uv, valid)


class _GenTask:
    """Mask-and-recover on the segmentation-filtered clouds. The frozen segmentation
    outputs are computed once."""

    def __init__(self, model: MapGenModel, samples: list[ObjectSample], cfg: TrainConfig):
        self.model = model
        self.mask_ratio = cfg.mask_ratio
        segs = run_segmentation(model, samples, epoch_rng(cfg.seed, "gen", CACHE_EPOCH), cfg.batch_size)
        self.items = list(zip(samples, segs))

    def loss(self, batch, rng) -> Tensor | None:
        cfg = self.model.cfg
        masked = []
        for s, sg in batch:
            rows = sg.prime_rows(cfg.fg_threshold)
            fr = s.frustum
            ratio = rng.uniform(*self.mask_ratio)
            ms = mask_sample(fr.points[rows], fr.projections[rows], fr.fg_mask[rows], sg.image_prob,
                             sg.feat, s.crop.shape[:2], cfg.m_points, ratio, rng)
            if ms is not None and len(ms.masked):
                masked.append(ms)
        if not masked:
            return None
        return mask_and_recover_loss(self.model.gen, masked)[0]


class _BoxTask:
    """dIoU regression on enriched clouds; segmentation and generation are frozen, so
    the clouds and pooled image features are computed once."""

    def __init__(self, model: MapGenModel, samples: list[ObjectSample], cfg: TrainConfig):
        self.model = model
        rng = epoch_rng(cfg.seed, "box", CACHE_EPOCH)
        segs = run_segmentation(model, samples, rng, cfg.batch_size)
        clouds, _ = enrich(model, samples, segs, rng, cfg.batch_size)
        self.items = [(c, sg.f_img, s.gt_box3d.as_array()) for s, sg, c in zip(samples, segs, clouds)]
        self.m = max([model.cfg.m_points, *(len(c) for c in clouds)])

    def loss(self, batch, rng) -> Tensor:
        clouds, f_img, gt = zip(*batch)
        x, valid, cent, ang = collate_clouds(list(clouds), self.m, self.model.box.frame)
        pred = self.model.box(x, valid, np.stack(f_img), cent, ang)
        return box_loss(pred, np.stack(gt))


def _load_upstream(model: MapGenModel, cfg: TrainConfig, checkpoint_in) -> list[str]:
    need = required_stages(cfg.stage, cfg.model)
    if checkpoint_in is None or not Path(checkpoint_in).exists():
        if need:
            raise StageDependencyError(need[0], checkpoint_in)
        return []
    state = load_checkpoint(checkpoint_in)
    have = model.stages_in(state)
    for s in need:
        if s not in have:
            raise StageDependencyError(s, checkpoint_in)
    upstream = [s for s in STAGE_ORDER if s in have and s != cfg.stage]
    model.load_state(state, upstream)
    return upstream


def _latest_state(sdir: Path) -> Path | None:
    files = sorted(sdir.glob("epoch_*.mgck"))
    return files[-1] if files else None


def run_stage(cfg: TrainConfig, checkpoint_in=None, checkpoint_out="model.mgck", *,
              samples: list[ObjectSample] | None = None, resume: bool = False,
              stop_after: int | None = None, log=None) -> TrainingReport:
    """Train one stage. Parameters of the other stages are frozen and copied unchanged
    from ``checkpoint_in`` into ``checkpoint_out``.

    Every epoch writes a resumable state file (the newest ``keep_states`` are kept) and
    rewrites the metrics log. ``stop_after`` ends the run after that epoch index
    without writing the final checkpoint, as an interrupted run would.
    """
    cfg.validate()
    model = MapGenModel(cfg.model, cfg.seed)
    upstream = _load_upstream(model, cfg, checkpoint_in)
    model.freeze_all_but(cfg.stage)
    if samples is None:
        samples = load_samples(cfg.data, cfg.split, cfg.model.crop, cfg.min_points, cfg.min_fg)
    samples = [s for s in samples if s.frustum.fg_mask is not None and s.gt_box3d is not None]
    if not samples:
        raise ValueError("no training samples with ground truth")

    started = time.perf_counter()
    if cfg.stage == "seg":
        task = _SegTask(model, samples)
    elif cfg.stage == "gen":
        task = _GenTask(model, samples, cfg)
    else:
        task = _BoxTask(model, samples, cfg)
    items = task.items

    params = model.parameters(cfg.stage)
    opt = Adam(params, cfg.lr, weight_decay=cfg.weight_decay)
    per_epoch = math.ceil(len(items) / cfg.batch_size)
    sched = LrSchedule(cfg.epochs * per_epoch, cfg.lr, cfg.warmup_frac)

    sdir, mpath = state_dir(checkpoint_out), metrics_path(checkpoint_out)
    records: list[dict] = []
    start = 0
    latest = _latest_state(sdir) if resume else None
    if latest is not None:
        state = load_checkpoint(latest)
        model.load_state(state, [cfg.stage])
        opt.load_state(state)
        start = int(state["meta.epoch"][()]) + 1
        if mpath.exists():
            records = [json.loads(line) for line in mpath.read_text().splitlines() if line.strip()]
            records = [r for r in records if r["epoch"] < start]
    elif sdir.exists():
        for f in sdir.glob("epoch_*.mgck"):
            f.unlink()

    for epoch in range(start, cfg.epochs):
        t0 = time.perf_counter()
        rng = epoch_rng(cfg.seed, cfg.stage, epoch)
        order = rng.permutation(len(items))
        total, count = 0.0, 0
        for b, sl in enumerate(batches(len(items), cfg.batch_size)):
            lr = sched(epoch * per_epoch + b)
            batch = [items[i] for i in order[sl]]
            loss = task.loss(batch, rng)
            if loss is None:
                continue
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
            total += loss.item() * len(batch)
            count += len(batch)
        rec = {"epoch": epoch, "stage": cfg.stage, "loss": total / count if count else None,
               "lr": lr, "seconds": time.perf_counter() - t0}
        records.append(rec)
        atomic_write(mpath, "".join(json.dumps(r, sort_keys=True) + "\n" for r in records).encode())
        save_checkpoint(sdir / f"epoch_{epoch:04d}.mgck",
                        {**model.state_dict([cfg.stage]), **opt.state(), "meta.epoch": np.array(float(epoch))})
        for old in sorted(sdir.glob("epoch_*.mgck"))[: -cfg.keep_states]:
            old.unlink()
        if log is not None:
            log(f"[{cfg.stage}] epoch {epoch + 1}/{cfg.epochs} loss {rec['loss']} lr {lr:.3g}")
        if stop_after is not None and epoch >= stop_after and epoch < cfg.epochs - 1:
            return TrainingReport(cfg.stage, epoch + 1, False, [r["loss"] for r in records],
                                  time.perf_counter() - started, len(items), str(checkpoint_out), str(mpath))

    stages = [s for s in STAGE_ORDER if s in upstream or s == cfg.stage]
    save_model(model, checkpoint_out, stages, {"train": _train_meta(cfg)})
    return TrainingReport(cfg.stage, cfg.epochs, True, [r["loss"] for r in records],
                          time.perf_counter() - started, len(items), str(checkpoint_out), str(mpath))


def _train_meta(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d.pop("model")
    return d
