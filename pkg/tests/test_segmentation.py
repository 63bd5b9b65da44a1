import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mapgen.autodiff import Tensor, class_weights
from mapgen.autodiff.nn import zero_module
from mapgen.geometry import FrustumCloud
from mapgen.segmentation import (
    ImageSegNet,
    PointSegNet,
    adaptive_avg_pool,
    foreground_filter,
    pixel_labels,
    point_inputs,
    seg_loss,
    segment_image,
    segment_points,
)


def cloud(rng, n):
    pts = np.column_stack([rng.uniform(5, 30, n), rng.uniform(-3, 3, n), rng.uniform(-1.5, 0.5, n)])
    return FrustumCloud(pts, rng.uniform(0, 16, (n, 2)), rng.uniform(0, 1, (n, 3)))


@pytest.fixture
def point_net(rng):
    return PointSegNet(rng, widths=(8, 16), head=(8,))


@pytest.fixture
def image_net(rng):
    return ImageSegNet(rng, widths=(4, 6, 8), pool_dim=3, feat_dim=5)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**31 - 1))
def test_point_net_permutation_equivariant(n, seed):
    r = np.random.default_rng(seed)
    net = PointSegNet(np.random.default_rng(0), widths=(8, 16), head=(8,))
    fr = cloud(r, n)
    perm = r.permutation(n)
    out = segment_points(net, fr)
    assert out.shape == (n, 2)
    shuffled = segment_points(net, fr.subset(perm))
    assert np.abs(shuffled - out[perm]).max() < 1e-9


def test_point_net_padding_rows_do_not_leak(point_net, rng):
    fr = cloud(rng, 10)
    x = point_inputs(fr.points, fr.rgb)[None]
    padded = np.concatenate([x, rng.normal(size=(1, 5, 6)) * 100], axis=1)
    valid = np.array([[True] * 10 + [False] * 5])
    np.testing.assert_allclose(point_net(padded, valid).data[0, :10], point_net(x).data[0], atol=1e-12)


def test_zero_weight_point_net_is_uniform(point_net, rng):
    zero_module(point_net)
    out = segment_points(point_net, cloud(rng, 7))
    np.testing.assert_array_equal(out, np.zeros((7, 2)))


def test_image_net_shapes(image_net, rng):
    logits, feat, z = segment_image(image_net, rng.uniform(size=(20, 28, 3)))
    assert logits.shape == (20, 28, 2)
    assert feat.shape == (20, 28, 5) and z.shape == (20, 28, 5)


def test_image_net_large_shapes():
    net = ImageSegNet(np.random.default_rng(0))
    logits, feat, _ = segment_image(net, np.full((16, 16, 3), 0.3))
    assert logits.shape == (16, 16, 2) and feat.shape == (16, 16, 64)


def test_constant_crop_gives_constant_logits(image_net):
    logits, _, _ = segment_image(image_net, np.full((24, 24, 3), 0.7))
    assert np.abs(logits - logits[0, 0]).max() < 1e-9


def test_adaptive_pool_averages_cells(rng):
    x = rng.normal(size=(1, 6, 4, 2))
    out = adaptive_avg_pool(Tensor(x), 2).data
    np.testing.assert_allclose(out[0, 1, 0], x[0, 3:6, 0:2].mean(axis=(0, 1)), atol=1e-12)
    np.testing.assert_allclose(adaptive_avg_pool(Tensor(x), 1).data[0, 0, 0], x[0].mean(axis=(0, 1)))


def test_perfect_logits_give_tiny_loss():
    labels = np.array([[1, 0, 1, 0]])
    uv = np.array([[[0.5, 0.5], [1.5, 0.5], [0.5, 1.5], [1.5, 1.5]]])
    pl = np.where(labels[..., None] == 1, [-20.0, 20.0], [20.0, -20.0])
    il = np.zeros((1, 2, 2, 2))
    il[0, :, 0] = [-20.0, 20.0]
    il[0, :, 1] = [20.0, -20.0]
    assert seg_loss(Tensor(pl), Tensor(il), labels, uv).item() < 1e-6


def test_image_gradient_only_at_projected_pixels(rng):
    labels = np.array([[1, 0, 1, 1, 0]])
    uv = np.array([[[0.2, 0.2], [3.7, 0.1], [0.9, 0.9], [2.5, 2.5], [2.1, 2.9]]])
    il = Tensor(rng.normal(size=(1, 4, 4, 2)), requires_grad=True)
    seg_loss(Tensor(rng.normal(size=(1, 5, 2))), il, labels, uv).backward()
    hit = np.zeros((4, 4), dtype=bool)
    hit[[0, 0, 2], [0, 3, 2]] = True
    assert np.all(il.grad[0][~hit] == 0.0)
    assert np.all(np.abs(il.grad[0][hit]).sum(axis=-1) > 0)


def test_pixel_majority_label_ties_to_foreground():
    uv = np.array([[[0.1, 0.1], [0.6, 0.4], [1.5, 0.5], [1.2, 0.2], [1.9, 0.9]]])
    labels = np.array([[1, 0, 0, 0, 1]])
    (b, r, c), lab = pixel_labels(uv, labels, np.ones((1, 5), dtype=bool), 2, 2)
    got = {(int(ri), int(ci)): int(li) for ri, ci, li in zip(r, c, lab)}
    assert got == {(0, 0): 1, (0, 1): 0}


def test_class_weights_ten_and_ninety():
    # n_total / (2 n_c) by hand: 100/20 and 100/180
    w_fg, w_bg = class_weights(np.array([1] * 10 + [0] * 90))
    assert w_fg == pytest.approx(5.0) and w_bg == pytest.approx(100 / 180)


def test_background_only_batch_is_finite(rng):
    labels = np.zeros((1, 6), dtype=int)
    loss = seg_loss(Tensor(rng.normal(size=(1, 6, 2))), Tensor(rng.normal(size=(1, 4, 4, 2))), labels,
                    rng.uniform(0, 4, (1, 6, 2)))
    assert np.isfinite(loss.item())


def test_foreground_filter_examples(rng):
    fr = cloud(rng, 9)
    all_fg = np.tile([-5.0, 5.0], (9, 1))
    assert len(foreground_filter(fr, all_fg)) == 9
    all_bg = np.tile([5.0, -5.0], (9, 1))
    all_bg[4, 1] = -4.0
    kept = foreground_filter(fr, all_bg)
    assert len(kept) == 1 and kept.indices[0] == 4


@given(st.lists(st.tuples(st.floats(-30, 30), st.floats(-30, 30)), min_size=1, max_size=30))
def test_foreground_filter_size_bounds(logits):
    logits = np.array(logits)
    r = np.random.default_rng(0)
    out = foreground_filter(cloud(r, len(logits)), logits)
    assert 1 <= len(out) <= len(logits)
