"""Finite-difference gradient suite over every differentiable operation."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff.gradcheck import check_gradients
from .boxreg import BoxRegressor, EnrichedCloud, box_loss, collate_clouds
from .geometry import Box3D, box_corners, diou_loss
from .pointgen import AttentionLayer, PointGenerator, build_sequence, mask_and_recover_loss
from .pointgen.sequence import MaskedSample
from .segmentation import ImageSegNet, PointSegNet, seg_loss

OP_TOL = 1e-4
LOSS_TOL = 1e-3
GROUPS = ("autodiff", "attention", "diou", "losses")


@dataclass
class CheckResult:
    name: str
    group: str
    error: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.error)) and self.error < self.tolerance


def _leaf(rng, *shape, lo=None):
    data = rng.normal(size=shape) if lo is None else rng.uniform(lo, lo + 1.5, size=shape)
    return ad.tensor(data, requires_grad=True)


def _away_from_zero(rng, *shape):
    x = rng.uniform(0.2, 1.5, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return ad.tensor(x, requires_grad=True)


def _distinct(rng, *shape):
    """Values spaced at least 0.1 apart so max/min have a unique argument."""
    n = int(np.prod(shape))
    return ad.tensor((rng.permutation(n) * 0.1 + rng.uniform(0, 0.02, n)).reshape(shape), requires_grad=True)


def _op_checks() -> list[tuple[str, Callable[[np.random.Generator], float]]]:
    def weighted(t):
        w = np.random.default_rng(99).normal(size=t.shape)
        return (t * w).sum()

    def unary(fn, make=_leaf):
        def run(rng):
            a = make(rng, 3, 4)
            return check_gradients(lambda: weighted(fn(a)), [a])
        return run

    def binary(fn, make_b=_leaf):
        def run(rng):
            a, b = _leaf(rng, 3, 4), make_b(rng, 3, 4)
            return check_gradients(lambda: weighted(fn(a, b)), [a, b])
        return run

    def broadcast_add(rng):
        a, b = _leaf(rng, 3, 4), _leaf(rng, 4)
        return check_gradients(lambda: weighted(a + b * a), [a, b])

    def matmul(rng):
        a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5)
        return check_gradients(lambda: weighted(ad.matmul(a, b)), [a, b])

    def shapes(rng):
        a = _leaf(rng, 2, 3, 4)
        return check_gradients(lambda: weighted(ad.swapaxes(a.transpose(2, 0, 1).reshape(4, 6), 0, 1)), [a])

    def indexing(rng):
        a = _leaf(rng, 5, 4)
        rows = np.array([0, 2, 2, 4])
        return check_gradients(lambda: weighted(a[1:4, ::2]) + weighted(ad.getitem(a, (rows, [1, 1, 3, 0]))), [a])

    def joins(rng):
        a, b = _leaf(rng, 2, 3), _leaf(rng, 2, 3)
        return check_gradients(lambda: weighted(ad.concat([a, b], axis=1)) + weighted(ad.stack([a, b], 0)), [a, b])

    def reductions(rng):
        a = _leaf(rng, 3, 4)
        return check_gradients(lambda: weighted(a.sum(axis=0)) + weighted(a.mean(axis=1, keepdims=True)), [a])

    def where(rng):
        a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
        cond = rng.uniform(size=(3, 4)) > 0.5
        return check_gradients(lambda: weighted(ad.where(cond, a, b)), [a, b])

    def broadcast(rng):
        a = _leaf(rng, 1, 4)
        return check_gradients(lambda: weighted(ad.broadcast_to(a, (3, 4))), [a])

    def softmaxes(rng):
        a = _leaf(rng, 3, 4)
        return check_gradients(lambda: weighted(ad.softmax(a)) + weighted(ad.log_softmax(a, axis=0)), [a])

    def masked(rng):
        a = _leaf(rng, 2, 4)
        mask = np.array([[False, True, False, False], [True, False, False, True]])
        return check_gradients(lambda: weighted(ad.softmax(ad.masked_fill(a, mask, -np.inf))), [a])

    def layer_norm(rng):
        x, g, b = _leaf(rng, 3, 5), _leaf(rng, 5), _leaf(rng, 5)
        return check_gradients(lambda: weighted(ad.layer_norm(x, g, b)), [x, g, b])

    def linear(rng):
        x, w, b = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5), _leaf(rng, 5)
        return check_gradients(lambda: weighted(ad.linear(x, w, b)), [x, w, b])

    def conv(stride, mode):
        def run(rng):
            x, w, b = _leaf(rng, 1, 5, 6, 2), _leaf(rng, 3, 3, 2, 3), _leaf(rng, 3)
            return check_gradients(lambda: weighted(ad.conv2d(x, w, b, stride, 1, mode)), [x, w, b])
        return run

    def upsample(rng):
        x = _leaf(rng, 1, 2, 3, 2)
        return check_gradients(lambda: weighted(ad.bilinear_upsample(x, (5, 4))), [x])

    def sample(rng):
        x = _leaf(rng, 1, 4, 4, 2)
        coords = rng.uniform(0.6, 3.4, size=(1, 6, 2))
        return check_gradients(lambda: weighted(ad.bilinear_sample(x, coords)), [x])

    def pools(rng):
        x = _distinct(rng, 2, 5, 3)
        valid = np.array([[True] * 5, [True, True, False, True, False]])
        g = _leaf(rng, 1, 3, 3, 2)
        return check_gradients(lambda: weighted(ad.max_pool_over_points(x, valid))
                               + weighted(ad.global_average_pool(g)), [x, g])

    def smooth(rng):
        p = _leaf(rng, 4, 3)
        t = p.data + rng.uniform(0.1, 0.8, size=(4, 3)) * rng.choice([-1, 1], size=(4, 3))
        t[0] = p.data[0] + np.array([1.5, -2.0, 1.3])
        return check_gradients(lambda: ad.smooth_l1(p, t), [p])

    def bce(rng):
        lg = _leaf(rng, 6, 2)
        lab = np.array([1, 0, 0, 1, 0, 0])
        return check_gradients(lambda: ad.balanced_cross_entropy(lg, lab, ad.class_weights(lab)), [lg])

    return [
        ("add/sub/mul", binary(lambda a, b: a * b + a - b)),
        ("div", binary(lambda a, b: a / b, lambda rng, *s: _leaf(rng, *s, lo=0.5))),
        ("broadcast arithmetic", broadcast_add),
        ("neg/power/square", unary(lambda a: -(a ** 3) + ad.square(a))),
        ("exp", unary(ad.exp)),
        ("log", unary(ad.log, lambda rng, *s: _leaf(rng, *s, lo=0.5))),
        ("sqrt", unary(ad.sqrt, lambda rng, *s: _leaf(rng, *s, lo=0.5))),
        ("sin/cos", unary(lambda a: ad.sin(a) * ad.cos(a))),
        ("tanh/sigmoid", unary(lambda a: ad.tanh(a) + ad.sigmoid(a))),
        ("relu", unary(ad.relu, _away_from_zero)),
        ("atan2", binary(ad.atan2, _away_from_zero)),
        ("maximum/minimum", binary(lambda a, b: ad.maximum(a, b) + ad.minimum(a, b * 2.0), _distinct)),
        ("max", unary(lambda a: a.max(axis=1), _distinct)),
        ("sum/mean", reductions),
        ("matmul", matmul),
        ("reshape/transpose/swapaxes", shapes),
        ("getitem", indexing),
        ("concat/stack", joins),
        ("where", where),
        ("broadcast_to", broadcast),
        ("softmax/log_softmax", softmaxes),
        ("masked_fill", masked),
        ("layer_norm", layer_norm),
        ("linear", linear),
        ("conv2d zero pad", conv(1, "zero")),
        ("conv2d edge pad stride 2", conv(2, "edge")),
        ("bilinear_upsample", upsample),
        ("bilinear_sample", sample),
        ("max_pool_over_points/global_average_pool", pools),
        ("smooth_l1", smooth),
        ("balanced_cross_entropy", bce),
    ]


def _attention_checks():
    def layer(fusion, asymmetric):
        def run(rng):
            lay = AttentionLayer(8, 2, 12, 6, rng, fusion, asymmetric)
            ctx, h = _leaf(rng, 2, 5, 6), _leaf(rng, 2, 5, 8)
            known = np.array([[1, 1, 0, 1, 0], [1, 0, 1, 1, 1]], dtype=bool)
            w = rng.normal(size=(2, 5, 8))
            return check_gradients(lambda: (lay(ctx, h, known) * w).sum(), [ctx, h, *lay.parameters()])
        return run

    def generator(rng):
        gen = PointGenerator(rng, d_model=8, heads=2, ff=12, layers=2, feat_dim=4, pos_dim=4)
        gen.head.layers[-1].weight.data[:] = rng.normal(size=gen.head.layers[-1].weight.shape)
        c2d, f2d, c3d = rng.uniform(size=(1, 6, 2)), rng.normal(size=(1, 6, 4)), rng.normal(size=(1, 6, 3))
        known = np.array([[1, 1, 1, 0, 0, 1]], dtype=bool)
        w = rng.normal(size=(1, 6, 3))
        return check_gradients(lambda: (gen(c2d, f2d, c3d, known) * w).sum(), gen.parameters())

    return [("attention layer concat", layer("concat", True)),
            ("attention layer add", layer("add", True)),
            ("attention layer gating", layer("gating", True)),
            ("attention layer symmetric", layer("concat", False)),
            ("point generator", generator)]


def _segments(corners: np.ndarray):
    return [(corners[i], corners[(i + 1) % 4]) for i in range(4)]


def _point_segment_distance(p, a, b) -> float:
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def near_degenerate(a: Box3D, b: Box3D, tol: float = 1e-4) -> bool:
    """True near a kink of the loss: a footprint vertex within ``tol`` of the other
    footprint's boundary, coinciding vertical faces or enclosing-box extents, or two
    footprint corners tied for a box's extreme x or y."""
    ca, cb = box_corners(a)[:4, :2], box_corners(b)[:4, :2]
    for p_set, q_set in ((ca, cb), (cb, ca)):
        for p in p_set:
            if any(_point_segment_distance(p, s, e) < tol for s, e in _segments(q_set)):
                return True
    za = (a.cz - a.h / 2, a.cz + a.h / 2)
    zb = (b.cz - b.h / 2, b.cz + b.h / 2)
    if min(abs(x - y) for x in za for y in zb) < tol:
        return True
    for axis in range(2):
        xa, xb = np.sort(ca[:, axis]), np.sort(cb[:, axis])
        if min(xa[1] - xa[0], xa[3] - xa[2], xb[1] - xb[0], xb[3] - xb[2]) < tol:
            return True
        if abs(xa[0] - xb[0]) < tol or abs(xa[3] - xb[3]) < tol:
            return True
    return False


def random_box_pair(rng: np.random.Generator) -> tuple[np.ndarray, Box3D]:
    gt = Box3D(rng.uniform(5, 30), rng.uniform(-5, 5), rng.uniform(-1, 0), rng.uniform(1.3, 1.8),
               rng.uniform(3.2, 4.6), rng.uniform(1.4, 1.9), rng.uniform(-np.pi, np.pi))
    pred = gt.as_array() + np.concatenate([rng.normal(0, 0.6, 3), np.zeros(3), rng.normal(0, 0.4, 1)])
    pred[3:6] *= np.exp(rng.normal(0, 0.15, 3))
    return pred, gt


def diou_pairs(rng: np.random.Generator, count: int = 50):
    out = []
    while len(out) < count:
        pred, gt = random_box_pair(rng)
        if not near_degenerate(Box3D.from_array(pred), gt):
            out.append((pred, gt))
    return out


def _diou_checks():
    def run(rng):
        worst = 0.0
        for pred, gt in diou_pairs(rng):
            p = ad.tensor(pred, requires_grad=True)
            worst = max(worst, check_gradients(lambda: diou_loss(p, gt), [p], h=1e-6))
        return worst

    return [("diou_loss (50 pairs)", run)]


def _loss_checks():
    def seg(rng):
        pn = PointSegNet(rng, widths=(6, 8), head=(6,))
        img = ImageSegNet(rng, widths=(3, 4, 4), grids=(1, 2), pool_dim=2, feat_dim=4)
        x = rng.normal(size=(2, 7, 6))
        valid = np.ones((2, 7), dtype=bool)
        valid[1, 5:] = False
        labels = (rng.uniform(size=(2, 7)) > 0.5).astype(np.int64)
        labels[:, 0], labels[:, 1] = 0, 1
        crops = rng.uniform(size=(2, 8, 8, 3))
        uv = rng.uniform(0, 8, size=(2, 7, 2))
        params = [*pn.parameters()[-2:], img.classifier.weight, img.skip.weight, img.enc1.weight]
        return check_gradients(lambda: seg_loss(pn(x, valid), img(crops)[0], labels, uv, valid), params)

    def gen(rng):
        g = PointGenerator(rng, d_model=8, heads=2, ff=12, layers=2, feat_dim=4, pos_dim=4)
        g.head.layers[-1].weight.data[:] = rng.normal(0, 0.3, size=g.head.layers[-1].weight.shape)
        batch = []
        for _ in range(2):
            pts = rng.normal(size=(5, 3)) + [10.0, 1.0, 0.0]
            uv = rng.uniform(0, 6, size=(5, 2))
            targets = rng.uniform(0, 6, size=(2, 2))
            masked = np.array([1, 3])
            seq = build_sequence(pts, uv, targets, rng.normal(size=(6, 6, 4)), (6, 6), masked=masked)
            batch.append(MaskedSample(seq, masked, seq.frame.normalize(pts[masked])))
        return check_gradients(lambda: mask_and_recover_loss(g, batch)[0], g.parameters())

    def box(rng):
        reg = BoxRegressor(rng, widths=(6, 8), img_dim=3, hidden=6)
        clouds = []
        gts = []
        for _ in range(2):
            pred, gt = random_box_pair(rng)
            pts = gt.center + rng.normal(0, 0.7, size=(9, 3))
            clouds.append(EnrichedCloud(pts, rng.uniform(size=(9, 3)), np.ones(9, dtype=bool)))
            gts.append(gt)
        x, valid, cent, ang = collate_clouds(clouds, 9)
        f_img = rng.normal(size=(2, 3))
        params = [p for p in reg.parameters() if p.data.size <= 64]
        return check_gradients(lambda: box_loss(reg(x, valid, f_img, cent, ang), gts), params, h=1e-6)

    return [("seg loss graph", seg), ("mask-and-recover loss graph", gen), ("box dIoU loss graph", box)]


def run_gradcheck(group: str = "all", seed: int = 0, log=None) -> list[CheckResult]:
    if group != "all" and group not in GROUPS:
        raise ValueError(f"module must be 'all' or one of {GROUPS}")
    suites = {"autodiff": (_op_checks, OP_TOL), "attention": (_attention_checks, OP_TOL),
              "diou": (_diou_checks, OP_TOL), "losses": (_loss_checks, LOSS_TOL)}
    results = []
    for name in GROUPS:
        if group not in ("all", name):
            continue
        make, tol = suites[name]
        for i, (label, fn) in enumerate(make()):
            rng = np.random.default_rng(np.random.SeedSequence([seed, GROUPS.index(name), i]))
            t0 = time.perf_counter()
            res = CheckResult(label, name, float(fn(rng)), tol)
            results.append(res)
            if log is not None:
                log(f"{name:9s} {label:42s} {res.error:.3e}  {'ok' if res.ok else 'FAIL'}"
                    f"  ({time.perf_counter() - t0:.2f}s)")
    return results

