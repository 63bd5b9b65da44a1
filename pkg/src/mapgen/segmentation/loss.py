from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..geometry import FrustumCloud


def crop_pixels(uv: np.ndarray, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column of the crop pixel containing each crop coordinate (pixel j is [j, j+1))."""
    col = np.clip(np.floor(uv[..., 0]).astype(np.int64), 0, width - 1)
    row = np.clip(np.floor(uv[..., 1]).astype(np.int64), 0, height - 1)
    return row, col


def pixel_labels(uv: np.ndarray, labels: np.ndarray, valid: np.ndarray, width: int, height: int):
    """Unique supervised pixels per batch row with their majority point label.

    ``uv``/``labels``/``valid`` are ``[B, n, ...]``. A tie between foreground and
    background points in one pixel resolves to foreground. Returns index arrays
    ``(b, row, col)`` and the 0/1 label of each pixel.
    """
    row, col = crop_pixels(uv, width, height)
    bidx = np.broadcast_to(np.arange(uv.shape[0])[:, None], row.shape)
    flat = (bidx * height + row) * width + col
    flat, lab = flat[valid], np.asarray(labels, dtype=np.int64)[valid]
    keys, inv = np.unique(flat, return_inverse=True)
    fg = np.bincount(inv, weights=lab, minlength=len(keys))
    total = np.bincount(inv, minlength=len(keys))
    pix_lab = (2 * fg >= total).astype(np.int64)
    b, rem = np.divmod(keys, height * width)
    r, c = np.divmod(rem, width)
    return (b, r, c), pix_lab


def seg_loss(point_logits: Tensor, image_logits: Tensor, labels: np.ndarray, uv: np.ndarray,
             valid: np.ndarray | None = None) -> Tensor:
    """Balanced cross entropy on points plus on image logits at LiDAR-hit pixels.

    ``point_logits`` is ``[B, n, 2]``, ``image_logits`` ``[B, H, W, 2]``; ``uv`` are the
    points' crop coordinates. Both terms carry equal weight.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if valid is None:
        valid = np.ones(labels.shape, dtype=bool)
    pl = ad.getitem(point_logits, np.nonzero(valid))
    pt = labels[valid]
    point_term = ad.balanced_cross_entropy(pl, pt, ad.class_weights(pt))
    _, h, w, _ = image_logits.shape
    idx, pix_lab = pixel_labels(uv, labels, valid, w, h)
    il = ad.getitem(image_logits, idx)
    image_term = ad.balanced_cross_entropy(il, pix_lab, ad.class_weights(pix_lab))
    return point_term + image_term


def foreground_probability(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    return 1.0 / (1.0 + np.exp(logits[..., 0] - logits[..., 1]))


def foreground_filter(frustum: FrustumCloud, logits: np.ndarray, threshold: float = 0.5) -> FrustumCloud:
    """Keep points whose foreground probability reaches ``threshold``; never returns an
    empty cloud (falls back to the single most confident point)."""
    prob = foreground_probability(logits)
    keep = np.flatnonzero(prob >= threshold)
    if len(keep) == 0 and len(prob):
        keep = np.array([int(np.argmax(prob))])
    return frustum.subset(keep)
