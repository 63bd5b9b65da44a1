"""Target sampling, sequence construction, decoding and the mask-and-recover objective."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import ShapeError, Tensor
from ..segmentation import rotate_z
from .attention import PointGenerator

COORD_SCALE = 10.0
FG_THRESHOLD = 0.5


@dataclass(frozen=True)
class Frame:
    """Object-centric frame: origin at the known-point centroid, x axis along its azimuth,
    lengths in units of ``scale`` meters."""

    centroid: np.ndarray
    angle: float
    scale: float = COORD_SCALE

    @classmethod
    def from_points(cls, points: np.ndarray) -> "Frame":
        c = np.asarray(points, dtype=np.float64).reshape(-1, 3).mean(axis=0)
        return cls(c, float(math.atan2(c[1], c[0])))

    def normalize(self, pts: np.ndarray) -> np.ndarray:
        return rotate_z(np.asarray(pts, dtype=np.float64).reshape(-1, 3) - self.centroid, -self.angle) / self.scale

    def denormalize(self, q: np.ndarray) -> np.ndarray:
        return rotate_z(np.asarray(q, dtype=np.float64).reshape(-1, 3) * self.scale, self.angle) + self.centroid


@dataclass
class PointSequence:
    c2d: np.ndarray
    f2d: np.ndarray
    c3d: np.ndarray
    known_mask: np.ndarray
    frame: Frame
    crop_size: tuple[int, int]
    f3d: Tensor | None = None

    def __len__(self) -> int:
        return len(self.c2d)

    @property
    def c2d_norm(self) -> np.ndarray:
        h, w = self.crop_size
        return self.c2d / np.array([w, h], dtype=np.float64)


def sample_targets(image_fg: np.ndarray, n_known: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """``k = max(0, m - n_known)`` crop positions ``(u, v)`` on the image foreground.

    Pixels are drawn uniformly among those with probability >= 0.5 (with replacement
    only when fewer than ``k`` qualify, from the top-``k`` pixels when none do) and
    each position is jittered uniformly inside its pixel.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    k = max(0, m - n_known)
    if k == 0:
        return np.zeros((0, 2))
    prob = np.asarray(image_fg, dtype=np.float64)
    h, w = prob.shape
    flat = prob.reshape(-1)
    cand = np.flatnonzero(flat >= FG_THRESHOLD)
    if len(cand) >= k:
        pick = rng.choice(cand, size=k, replace=False)
    elif len(cand) > 0:
        pick = rng.choice(cand, size=k, replace=True)
    else:
        top = np.argsort(-flat, kind="stable")[: min(k, flat.size)]
        pick = rng.choice(top, size=k, replace=k > len(top))
    rows, cols = np.divmod(pick, w)
    jitter = rng.uniform(0.0, 1.0, (k, 2))
    return np.column_stack([cols + jitter[:, 0], rows + jitter[:, 1]])


def subsample_rows(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """Indices keeping at most ``m`` of ``n`` rows (sorted, uniformly chosen)."""
    if n <= m:
        return np.arange(n)
    return np.sort(rng.choice(n, size=m, replace=False))


def build_sequence(points: np.ndarray, uv: np.ndarray, targets: np.ndarray, feature_map: np.ndarray,
                   crop_size: tuple[int, int], gen: PointGenerator | None = None,
                   masked: np.ndarray | None = None) -> PointSequence:
    """Rows are the measured points (crop coordinates ``uv``) followed by the targets.

    ``masked`` rows among the measured points are treated like targets: their 3D
    coordinates are withheld and they take the shared unknown embedding.
    """
    feature_map = np.asarray(feature_map, dtype=np.float64)
    if feature_map.ndim != 3 or feature_map.shape[:2] != tuple(crop_size):
        raise ShapeError(f"feature map {feature_map.shape} does not match crop size {tuple(crop_size)}")
    n = len(points)
    known = np.zeros(n + len(targets), dtype=bool)
    known[:n] = True
    if masked is not None and len(masked):
        known[np.asarray(masked)] = False
    if not known.any():
        raise ValueError("a sequence needs at least one known point")
    frame = Frame.from_points(points[known[:n]])
    c3d = np.zeros((len(known), 3))
    c3d[known] = frame.normalize(points[known[:n]])
    c2d = np.concatenate([np.asarray(uv, dtype=np.float64).reshape(-1, 2), targets.reshape(-1, 2)])
    f2d = ad.bilinear_sample(feature_map[None], c2d[None]).data[0]
    seq = PointSequence(c2d, f2d, c3d, known, frame, tuple(crop_size))
    if gen is not None:
        seq.f3d = gen.features_3d(c3d[None], known[None])
    return seq


def collate(seqs: list[PointSequence]):
    """Stack equal-length sequences into ``(c2d_norm, f2d, c3d, known)`` batch arrays."""
    lengths = {len(s) for s in seqs}
    if len(lengths) != 1:
        raise ShapeError(f"sequences of different lengths {sorted(lengths)}")
    return (np.stack([s.c2d_norm for s in seqs]), np.stack([s.f2d for s in seqs]),
            np.stack([s.c3d for s in seqs]), np.stack([s.known_mask for s in seqs]))


def decode_targets(gen: PointGenerator, seqs: list[PointSequence]) -> list[np.ndarray]:
    """Predicted 3D points (meters) for the unknown rows of each sequence."""
    if not seqs:
        return []
    pred = gen(*collate(seqs)).data
    return [s.frame.denormalize(p[~s.known_mask]) for s, p in zip(seqs, pred)]


@dataclass
class MaskedSample:
    seq: PointSequence
    masked: np.ndarray
    truth: np.ndarray  # normalized coordinates of the masked rows


def mask_sample(points: np.ndarray, uv: np.ndarray, is_fg: np.ndarray, image_fg: np.ndarray,
                feature_map: np.ndarray, crop_size: tuple[int, int], m: int, ratio: float,
                rng: np.random.Generator) -> MaskedSample | None:
    """Withhold ``ceil(ratio * n_fg)`` foreground rows (at least one row stays known) and
    fill the sequence up to ``m`` with sampled targets. ``None`` when fewer than two
    foreground points are available."""
    keep = subsample_rows(len(points), m, rng)
    points, uv, is_fg = points[keep], uv[keep], np.asarray(is_fg, dtype=bool)[keep]
    fg_rows = np.flatnonzero(is_fg)
    if len(fg_rows) < 2:
        return None
    n_mask = min(int(math.ceil(ratio * len(fg_rows) - 1e-12)), len(points) - 1)
    masked = np.sort(rng.choice(fg_rows, size=n_mask, replace=False)) if n_mask > 0 else np.zeros(0, np.int64)
    targets = sample_targets(image_fg, len(points), m, rng)
    seq = build_sequence(points, uv, targets, feature_map, crop_size, masked=masked)
    return MaskedSample(seq, masked, seq.frame.normalize(points[masked]))


def mask_and_recover_loss(gen: PointGenerator, batch: list[MaskedSample]):
    """SmoothL1 between decoded and withheld normalized coordinates over all masked
    rows of the batch. Returns ``(loss, per-point error in meters)``."""
    pred = gen(*collate([b.seq for b in batch]))
    rows = np.concatenate([np.full(len(b.masked), i) for i, b in enumerate(batch)]).astype(np.int64)
    cols = np.concatenate([b.masked for b in batch]).astype(np.int64)
    truth = np.concatenate([b.truth for b in batch]).reshape(-1, 3)
    picked = ad.getitem(pred, (rows, cols))
    loss = ad.smooth_l1(picked, truth)
    scale = np.array([b.seq.frame.scale for b in batch])[rows]
    err = np.linalg.norm(picked.data - truth, axis=1) * scale
    return loss, err
