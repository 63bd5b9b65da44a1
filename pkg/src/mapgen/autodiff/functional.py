"""Neural-network ops and losses built on :mod:`mapgen.autodiff.tensor`."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    _result,
    _wrap,
    concat,
    getitem,
    matmul,
    relu,
    unbroadcast,
)


def softmax(x, axis: int = -1) -> Tensor:
    """Max-shifted softmax; rows of ``-inf`` entries are allowed as long as one is finite."""
    x = _wrap(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _result(out, (x,), backward)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = _wrap(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),)

    return _result(out, (x,), backward)


def masked_fill(x, mask, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by the constant ``value``."""
    x = _wrap(x)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    return _result(np.where(mask, value, x.data), (x,), lambda g: (np.where(mask, 0.0, g),))


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx = gg = gb = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        if gamma.requires_grad:
            gg = unbroadcast(g * xhat, gamma.shape)
        if beta.requires_grad:
            gb = unbroadcast(g, beta.shape)
        return gx, gg, gb

    return _result(out, (x, gamma, beta), backward)


def linear(x, weight, bias=None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else out + bias


def mlp_forward(layers: Sequence[tuple], x, activation: Callable | None = relu,
                final_activation: bool = False) -> Tensor:
    """Affine, activation, affine, ... over ``layers`` given as ``(weight, bias)`` pairs.

    No activation follows the last affine map unless ``final_activation``.
    """
    h = _wrap(x)
    for i, (w, b) in enumerate(layers):
        if h.shape[-1] != w.shape[0]:
            raise ShapeError(f"mlp layer {i}: input width {h.shape[-1]} does not match "
                             f"weight {w.shape}")
        h = linear(h, w, b)
        if activation is not None and (i < len(layers) - 1 or final_activation):
            h = activation(h)
    return h


# ---------------------------------------------------------------------- images
def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, : (ho - 1) * stride + 1: stride, : (wo - 1) * stride + 1: stride]
    # [B, Ho, Wo, C, k, k] -> [B, Ho, Wo, k, k, C]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))


def _edge_pad_grad(gxp: np.ndarray, p: int, h: int, w: int) -> np.ndarray:
    rows = gxp[:, p: p + h].copy()
    rows[:, 0] += gxp[:, :p].sum(axis=1)
    rows[:, -1] += gxp[:, p + h:].sum(axis=1)
    gx = rows[:, :, p: p + w].copy()
    gx[:, :, 0] += rows[:, :, :p].sum(axis=2)
    gx[:, :, -1] += rows[:, :, p + w:].sum(axis=2)
    return gx


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0, pad_mode: str = "zero") -> Tensor:
    """NHWC convolution as a window-unrolled matmul.

    ``x`` is ``[B, H, W, Cin]`` and ``weight`` is ``[k, k, Cin, Cout]``.
    ``pad_mode`` is ``"zero"`` or ``"edge"`` (border pixels replicated).
    """
    x, weight = _wrap(x), _wrap(weight)
    k, k2, cin, cout = weight.shape
    if k != k2 or x.shape[-1] != cin:
        raise ShapeError(f"conv2d: input {x.shape} vs kernel {weight.shape}")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: stride {stride} unsupported")
    b, h, w, _ = x.shape
    if pad_mode not in ("zero", "edge"):
        raise ValueError(f"conv2d: unknown pad_mode {pad_mode!r}")
    widths = ((0, 0), (padding, padding), (padding, padding), (0, 0))
    xp = np.pad(x.data, widths, mode="edge" if pad_mode == "edge" and padding else "constant")
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    cols = _im2col(xp, k, stride, ho, wo).reshape(b, ho, wo, k * k * cin)
    wmat = weight.data.reshape(k * k * cin, cout)
    out = cols @ wmat
    parents: tuple = (x, weight)
    if bias is not None:
        bias = _wrap(bias)
        out = out + bias.data
        parents = (x, weight, bias)

    def backward(g):
        gx = gw = None
        if x.requires_grad:
            gcols = (g @ wmat.T).reshape(b, ho, wo, k, k, cin)
            gxp = np.zeros(xp.shape)
            for i in range(k):
                for j in range(k):
                    gxp[:, i: i + stride * (ho - 1) + 1: stride,
                        j: j + stride * (wo - 1) + 1: stride, :] += gcols[:, :, :, i, j, :]
            if pad_mode == "edge" and padding:
                gx = _edge_pad_grad(gxp, padding, h, w)
            else:
                gx = gxp[:, padding: padding + h, padding: padding + w, :]
        if weight.requires_grad:
            gw = (cols.reshape(-1, k * k * cin).T @ g.reshape(-1, cout)).reshape(weight.shape)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.reshape(-1, cout).sum(axis=0) if bias.requires_grad else None)
        return tuple(grads)

    return _result(out, parents, backward)


def _interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1.0 - frac
    m[np.arange(n_out), hi] += frac
    return m


def bilinear_upsample(x, size: tuple[int, int]) -> Tensor:
    """Resize ``[B, h, w, C]`` to ``[B, H, W, C]`` (half-pixel centers)."""
    x = _wrap(x)
    bsz, h, w, c = x.shape
    hh, ww = size
    uy = _interp_matrix(hh, h)
    ux = _interp_matrix(ww, w)
    t = np.matmul(uy, x.data.reshape(bsz, h, w * c)).reshape(bsz, hh, w, c)
    out = np.einsum("Xw,bYwc->bYXc", ux, t)

    def backward(g):
        gt = np.einsum("Xw,bYXc->bYwc", ux, g)
        gx = np.matmul(uy.T, gt.reshape(bsz, hh, w * c)).reshape(bsz, h, w, c)
        return (gx,)

    return _result(out, (x,), backward)


def bilinear_sample(feat, coords: np.ndarray) -> Tensor:
    """Sample ``feat[B, H, W, C]`` at continuous pixel ``coords[B, m, 2]`` given as (u, v).

    Pixel ``j`` covers ``[j, j+1)`` so its center sits at ``j + 0.5``. Samples are
    clamped to the map border. Coordinates are constants (no gradient).
    """
    feat = _wrap(feat)
    bsz, h, w, c = feat.shape
    coords = np.asarray(coords, dtype=np.float64)
    px = np.clip(coords[..., 0] - 0.5, 0.0, w - 1)
    py = np.clip(coords[..., 1] - 0.5, 0.0, h - 1)
    x0 = np.floor(px).astype(int)
    y0 = np.floor(py).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (px - x0)[..., None]
    fy = (py - y0)[..., None]
    bi = np.broadcast_to(np.arange(bsz)[:, None], x0.shape)
    taps = [(y0, x0, (1 - fy) * (1 - fx)), (y0, x1, (1 - fy) * fx),
            (y1, x0, fy * (1 - fx)), (y1, x1, fy * fx)]
    out = sum(wt * feat.data[bi, yy, xx] for yy, xx, wt in taps)

    def backward(g):
        grad = np.zeros(feat.shape)
        for yy, xx, wt in taps:
            np.add.at(grad, (bi, yy, xx), g * wt)
        return (grad,)

    return _result(out, (feat,), backward)


def global_average_pool(x) -> Tensor:
    """``[B, H, W, C] -> [B, C]``."""
    x = _wrap(x)
    return x.mean(axis=(1, 2))


def max_pool_over_points(x, valid: np.ndarray | None = None) -> Tensor:
    """Max over the point axis of ``[B, n, C]``; padded rows (``valid`` false) are ignored."""
    x = _wrap(x)
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        if not valid.any(axis=1).all():
            raise ShapeError("max_pool_over_points: a batch row has no valid points")
        x = masked_fill(x, ~valid[..., None], -np.inf)
    return x.max(axis=1)


# ---------------------------------------------------------------------- losses
def smooth_l1(pred, target) -> Tensor:
    """Mean of 0.5 x^2 for |x| < 1 and |x| - 0.5 otherwise, with x = pred - target."""
    pred = _wrap(pred)
    target = _wrap(target)
    if pred.shape != target.shape:
        raise ShapeError(f"smooth_l1: {pred.shape} vs {target.shape}")
    n = pred.size
    d = pred.data - target.data
    a = np.abs(d)
    small = a < 1.0
    val = float(np.where(small, 0.5 * d * d, a - 0.5).sum() / n) if n else 0.0

    def backward(g):
        if n == 0:
            return np.zeros(pred.shape), np.zeros(target.shape)
        gd = np.where(small, d, np.sign(d)) * (g / n)
        return gd, -gd

    return _result(np.asarray(val), (pred, target), backward)


def class_weights(labels: np.ndarray, clip: tuple[float, float] = (0.1, 10.0)) -> tuple[float, float]:
    """Population-balanced ``(w_fg, w_bg)`` = n_total / (2 n_c), clipped."""
    labels = np.asarray(labels).astype(bool)
    n = labels.size
    out = []
    for count in (int(labels.sum()), int(n - labels.sum())):
        w = n / (2.0 * count) if count else clip[1]
        out.append(float(np.clip(w, *clip)))
    return out[0], out[1]


def balanced_cross_entropy(logits, labels, weights: tuple[float, float]) -> Tensor:
    """Class-weighted mean negative log-likelihood.

    ``logits`` is ``[n, 2]`` with column 1 the foreground class; ``labels`` are 0/1
    and ``weights`` is ``(w_fg, w_bg)``. The weighted mean divides by the summed
    row weights. An empty batch yields 0 with a zero gradient.
    """
    logits = _wrap(logits)
    labels = np.asarray(labels).astype(np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[1] != 2 or logits.shape[0] != labels.size:
        raise ShapeError(f"balanced_cross_entropy: logits {logits.shape}, labels {labels.shape}")
    if labels.size == 0:
        return logits.sum() * 0.0
    if np.any((labels != 0) & (labels != 1)):
        raise ValueError("labels must be 0 or 1")
    w_fg, w_bg = weights
    if w_fg <= 0 or w_bg <= 0:
        raise ValueError("class weights must be positive")
    row_w = np.where(labels == 1, w_fg, w_bg)
    nll = -getitem(log_softmax(logits, axis=-1), (np.arange(labels.size), labels))
    return (nll * row_w).sum() / float(row_w.sum())


__all__ = [
    "softmax", "log_softmax", "masked_fill", "layer_norm", "linear", "mlp_forward",
    "conv2d", "bilinear_upsample", "bilinear_sample", "global_average_pool",
    "max_pool_over_points", "smooth_l1", "class_weights", "balanced_cross_entropy",
    "concat",
]
