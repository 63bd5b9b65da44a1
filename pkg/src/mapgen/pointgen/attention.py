"""Multimodal attention stack: 2D position, 2D image features and 3D features."""
from __future__ import annotations

import math

import numpy as np

from .. import autodiff as ad
from ..autodiff import MLP, LayerNorm, Linear, Module, Parameter, Tensor

POS_EMB = ("mlp", "sinusoid", "none")
FUSION = ("concat", "add", "gating")


def sinusoid_embedding(xy: np.ndarray, dim: int) -> np.ndarray:
    """Fixed sin/cos features of normalized 2D positions, ``dim`` channels (multiple of 4)."""
    n_freq = dim // 4
    freqs = math.pi * 2.0 ** np.arange(n_freq)
    ang = xy[..., :, None] * freqs  # [..., 2, n_freq]
    feats = np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)
    out = feats.reshape(*xy.shape[:-1], 4 * n_freq)
    pad = dim - out.shape[-1]
    return np.concatenate([out, np.zeros((*out.shape[:-1], pad))], axis=-1) if pad else out


class AttentionLayer(Module):
    """Pre-norm layer. Queries and keys see position, image feature and 3D feature;
    values see the 3D feature only (unless ``asymmetric`` is off)."""

    def __init__(self, d_model: int, heads: int, ff: int, ctx_dim: int, rng: np.random.Generator,
                 fusion: str = "concat", asymmetric: bool = True):
        if d_model % heads:
            raise ValueError(f"d_model {d_model} not divisible by {heads} heads")
        if fusion not in FUSION:
            raise ValueError(f"fusion must be one of {FUSION}")
        self.heads = heads
        self.fusion = fusion
        self.asymmetric = asymmetric
        mixed_dim = ctx_dim + d_model if fusion == "concat" else d_model
        self.norm1 = LayerNorm(d_model)
        if fusion != "concat":
            self.ctx_proj = Linear(ctx_dim, d_model, rng)
        if fusion == "gating":
            self.gate = Linear(ctx_dim, d_model, rng)
        self.query = Linear(mixed_dim, d_model, rng)
        self.key = Linear(mixed_dim, d_model, rng)
        self.value = Linear(d_model if asymmetric else mixed_dim, d_model, rng)
        self.out = Linear(d_model, d_model, rng)
        self.norm2 = LayerNorm(d_model)
        self.ff = MLP([d_model, ff, d_model], rng)

    def mix(self, ctx: Tensor, hn: Tensor) -> Tensor:
        if self.fusion == "concat":
            return ad.concat([ctx, hn], axis=-1)
        if self.fusion == "add":
            return hn + self.ctx_proj(ctx)
        return hn + ad.sigmoid(self.gate(ctx)) * self.ctx_proj(ctx)

    def values(self, ctx: Tensor, h: Tensor) -> Tensor:
        hn = self.norm1(h)
        return self.value(hn if self.asymmetric else self.mix(ctx, hn))

    def _split(self, x: Tensor) -> Tensor:
        b, m, d = x.shape
        return x.reshape(b, m, self.heads, d // self.heads).transpose(0, 2, 1, 3)

    def __call__(self, ctx: Tensor, h: Tensor, known: np.ndarray, internals: dict | None = None) -> Tensor:
        """``ctx`` ``[B, m, c]``, ``h`` ``[B, m, d]``, ``known`` ``[B, m]``.

        Columns of unknown rows are excluded from every softmax, so nothing attends
        to a row that has no measured 3D feature.
        """
        b, m, d = h.shape
        hn = self.norm1(h)
        mixed = self.mix(ctx, hn)
        q = self._split(self.query(mixed))
        k = self._split(self.key(mixed))
        v = self._split(self.value(hn if self.asymmetric else mixed))
        scores = ad.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(d // self.heads))
        scores = ad.masked_fill(scores, ~np.asarray(known, dtype=bool)[:, None, None, :], -np.inf)
        attn = ad.softmax(scores, axis=-1)
        update = ad.matmul(attn, v).transpose(0, 2, 1, 3).reshape(b, m, d)
        if internals is not None:
            internals.update(attn=attn.data, values=v.transpose(0, 2, 1, 3).reshape(b, m, d).data,
                             update=update.data)
        h = h + self.out(update)
        return h + self.ff(self.norm2(h))


class PointGenerator(Module):
    """Embeds known 3D points, runs the attention stack, decodes target coordinates."""

    def __init__(self, rng: np.random.Generator, d_model: int = 512, heads: int = 8, ff: int = 1024,
                 layers: int = 4, feat_dim: int = 64, pos_dim: int = 128, pos_emb: str = "mlp",
                 fusion: str = "concat", asymmetric: bool = True):
        if pos_emb not in POS_EMB:
            raise ValueError(f"pos_emb must be one of {POS_EMB}")
        self.pos_emb = pos_emb
        self.pos_dim = pos_dim
        self.embed = MLP([3, d_model, d_model], rng)
        self.unknown = Parameter(rng.normal(0.0, 0.02, d_model))
        if pos_emb == "mlp":
            self.pos = MLP([2, pos_dim, pos_dim], rng)
        ctx_dim = pos_dim + feat_dim
        self.layers = [AttentionLayer(d_model, heads, ff, ctx_dim, rng, fusion, asymmetric)
                       for _ in range(layers)]
        self.norm = LayerNorm(d_model)
        self.head = MLP([d_model, d_model, 3], rng)
        # Untrained decodes start at the known-point centroid.
        self.head.layers[-1].weight.data[:] = 0.0

    def position(self, c2d_norm: np.ndarray) -> Tensor:
        if self.pos_emb == "mlp":
            return self.pos(c2d_norm)
        if self.pos_emb == "sinusoid":
            return ad.tensor(sinusoid_embedding(c2d_norm, self.pos_dim))
        return ad.tensor(np.zeros((*c2d_norm.shape[:-1], self.pos_dim)))

    def features_3d(self, c3d_norm: np.ndarray, known: np.ndarray) -> Tensor:
        """Known rows get ``f(c3d)``, all other rows the shared embedding ``u``."""
        emb = self.embed(c3d_norm)
        u = ad.broadcast_to(self.unknown, emb.shape)
        return ad.where(np.asarray(known, dtype=bool)[..., None], emb, u)

    def context(self, c2d_norm: np.ndarray, f2d) -> Tensor:
        return ad.concat([self.position(c2d_norm), ad.tensor(f2d)], axis=-1)

    def run_stack(self, ctx: Tensor, f3d: Tensor, known: np.ndarray, internals: list | None = None) -> Tensor:
        h = f3d
        for layer in self.layers:
            rec = {} if internals is not None else None
            h = layer(ctx, h, known, rec)
            if internals is not None:
                internals.append(rec)
        return h

    def __call__(self, c2d_norm: np.ndarray, f2d, c3d_norm: np.ndarray, known: np.ndarray) -> Tensor:
        """Normalized coordinate predictions ``[B, m, 3]`` for every row."""
        ctx = self.context(c2d_norm, f2d)
        h = self.run_stack(ctx, self.features_3d(c3d_norm, known), known)
        return self.head(self.norm(h))
