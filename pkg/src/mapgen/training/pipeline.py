"""Batched inference through the three networks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..boxreg import EnrichedCloud, collate_clouds, enrich_cloud
from ..dataio import ObjectSample
from ..pointgen import PointSequence, build_sequence, decode_targets, sample_targets, subsample_rows
from ..segmentation import foreground_probability, point_inputs
from .models import MapGenModel


@dataclass
class SegOutput:
    keep: np.ndarray  # frustum rows fed to the point network
    point_prob: np.ndarray
    image_prob: np.ndarray  # [H, W]
    feat: np.ndarray  # [H, W, C]
    f_img: np.ndarray  # [C], global average of Z

    def prime_rows(self, threshold: float = 0.5) -> np.ndarray:
        """Frustum rows kept by the foreground filter (never empty)."""
        rows = self.keep[self.point_prob >= threshold]
        return rows if len(rows) else self.keep[[int(np.argmax(self.point_prob))]]


def batches(n: int, size: int):
    for lo in range(0, n, size):
        yield slice(lo, min(n, lo + size))


def seg_arrays(samples: list[ObjectSample], n: int, rng: np.random.Generator):
    """Padded point-network inputs: ``x [B, n, 6]``, ``valid``, crop ``uv``, labels, kept rows."""
    b = len(samples)
    x = np.zeros((b, n, 6))
    valid = np.zeros((b, n), dtype=bool)
    uv = np.zeros((b, n, 2))
    labels = np.zeros((b, n), dtype=np.int64)
    keeps = []
    for i, s in enumerate(samples):
        keep = subsample_rows(len(s.frustum), n, rng)
        fr = s.frustum.subset(keep)
        k = len(keep)
        x[i, :k] = point_inputs(fr.points, fr.rgb)
        valid[i, :k] = True
        uv[i, :k] = fr.projections
        if fr.fg_mask is not None:
            labels[i, :k] = fr.fg_mask
        keeps.append(keep)
    return x, valid, uv, labels, keeps


def run_segmentation(model: MapGenModel, samples: list[ObjectSample], rng: np.random.Generator,
                     batch_size: int = 32) -> list[SegOutput]:
    out: list[SegOutput] = []
    n = model.cfg.n_points
    for sl in batches(len(samples), batch_size):
        chunk = samples[sl]
        x, valid, _, _, keeps = seg_arrays(chunk, n, rng)
        pl = model.seg_points(x, valid).data
        crops = np.stack([s.crop for s in chunk])
        il, feat, z = model.seg_image(crops)
        pprob = foreground_probability(pl)
        iprob = foreground_probability(il.data)
        f_img = z.data.mean(axis=(1, 2))
        for i, keep in enumerate(keeps):
            out.append(SegOutput(keep, pprob[i, : len(keep)], iprob[i], feat.data[i], f_img[i]))
    return out


@dataclass
class GenInput:
    rows: np.ndarray  # frustum rows used as measured points
    targets: np.ndarray  # crop positions of generated points
    seq: PointSequence


def generation_input(sample: ObjectSample, seg: SegOutput, m: int, rng: np.random.Generator,
                     threshold: float = 0.5) -> GenInput:
    rows = seg.prime_rows(threshold)
    rows = rows[subsample_rows(len(rows), m, rng)]
    targets = sample_targets(seg.image_prob, len(rows), m, rng)
    fr = sample.frustum
    seq = build_sequence(fr.points[rows], fr.projections[rows], targets, seg.feat, sample.crop.shape[:2])
    return GenInput(rows, targets, seq)


def enrich(model: MapGenModel, samples: list[ObjectSample], segs: list[SegOutput],
           rng: np.random.Generator, batch_size: int = 32, generation: bool | None = None):
    """Enriched clouds per sample, plus the generation inputs (``None`` without generation)."""
    cfg = model.cfg
    gen_on = cfg.generation if generation is None else generation
    clouds: list[EnrichedCloud] = []
    inputs: list[GenInput | None] = []
    for sl in batches(len(samples), batch_size):
        chunk, segc = samples[sl], segs[sl]
        if not gen_on:
            for s, sg in zip(chunk, segc):
                rows = sg.prime_rows(cfg.fg_threshold)
                rows = rows[subsample_rows(len(rows), cfg.m_points, rng)]
                fr = s.frustum
                clouds.append(enrich_cloud(fr.points[rows], fr.rgb[rows], np.zeros((0, 3)),
                                           np.zeros((0, 2)), s.crop))
                inputs.append(None)
            continue
        gins = [generation_input(s, sg, cfg.m_points, rng, cfg.fg_threshold) for s, sg in zip(chunk, segc)]
        decoded = decode_targets(model.gen, [g.seq for g in gins])
        for s, g, d in zip(chunk, gins, decoded):
            fr = s.frustum
            clouds.append(enrich_cloud(fr.points[g.rows], fr.rgb[g.rows], d, g.targets, s.crop))
            inputs.append(g)
    return clouds, inputs


def regress_boxes(model: MapGenModel, clouds: list[EnrichedCloud], f_imgs: list[np.ndarray],
                  batch_size: int = 32) -> np.ndarray:
    """Box parameters ``[N, 7]`` (sensor frame)."""
    out = np.zeros((len(clouds), 7))
    m = max([model.cfg.m_points, *(len(c) for c in clouds)]) if clouds else model.cfg.m_points
    for sl in batches(len(clouds), batch_size):
        x, valid, cent, ang = collate_clouds(clouds[sl], m, model.box.frame)
        out[sl] = model.box(x, valid, np.stack(f_imgs[sl]), cent, ang).data
    return out


@dataclass
class Inference:
    boxes: np.ndarray  # [N, 7]
    segs: list[SegOutput]
    clouds: list[EnrichedCloud]
    inputs: list[GenInput | None]


def infer(model: MapGenModel, samples: list[ObjectSample], rng: np.random.Generator,
          batch_size: int = 32) -> Inference:
    segs = run_segmentation(model, samples, rng, batch_size)
    clouds, inputs = enrich(model, samples, segs, rng, batch_size)
    boxes = regress_boxes(model, clouds, [s.f_img for s in segs], batch_size)
    return Inference(boxes, segs, clouds, inputs)
