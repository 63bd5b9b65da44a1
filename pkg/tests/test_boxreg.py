import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mapgen.autodiff import Adam, Tensor
from mapgen.autodiff.gradcheck import check_gradients
from mapgen.boxreg import (
    BoxRegressor,
    EnrichedCloud,
    box_loss,
    collate_clouds,
    enrich_cloud,
    params_to_box,
    regress_box,
    regressor_inputs,
)

GT = np.array([12.0, 2.0, -0.8, 1.5, 3.9, 1.6, 0.4])


def car_cloud(rng, n=30):
    local = rng.uniform(-0.5, 0.5, (n, 3)) * GT[[4, 5, 3]]
    c, s = np.cos(GT[6]), np.sin(GT[6])
    pts = np.column_stack([c * local[:, 0] - s * local[:, 1], s * local[:, 0] + c * local[:, 1], local[:, 2]])
    pts += GT[:3]
    return EnrichedCloud(pts, rng.uniform(size=(n, 3)), np.ones(n, dtype=bool))


def small_regressor(seed=0, **kw):
    return BoxRegressor(np.random.default_rng(seed), widths=(8, 16), img_dim=4, hidden=16, **kw)


def test_matching_box_has_zero_loss():
    assert box_loss(Tensor(GT), GT).item() == pytest.approx(0.0, abs=1e-12)
    assert box_loss(Tensor(np.stack([GT, GT])), np.stack([GT, GT])).item() == pytest.approx(0.0, abs=1e-12)


def test_enrich_cloud_layout(rng):
    crop = rng.uniform(size=(6, 5, 3))
    pts, rgb = rng.normal(size=(4, 3)), rng.uniform(size=(4, 3))
    cl = enrich_cloud(pts, rgb, rng.normal(size=(2, 3)), np.array([[0.5, 0.5], [4.2, 5.9]]), crop)
    assert len(cl) == 6 and cl.origin_mask.tolist() == [True] * 4 + [False] * 2
    np.testing.assert_array_equal(cl.rgb[4], crop[0, 0])
    np.testing.assert_array_equal(cl.rgb[5], crop[5, 4])
    empty = enrich_cloud(pts, rgb, np.zeros((0, 3)), np.zeros((0, 2)), crop)
    assert len(empty) == 4


def test_regressor_inputs_center_cloud(rng):
    cl = car_cloud(rng)
    x, centroid, angle = regressor_inputs(cl)
    assert x.shape == (30, 6)
    np.testing.assert_allclose(x[:, :3].mean(axis=0), 0.0, atol=1e-12)
    assert angle == pytest.approx(np.arctan2(centroid[1], centroid[0]))
    assert regressor_inputs(cl, "sensor")[2] == 0.0


def test_collate_rejects_oversized_and_empty(rng):
    with pytest.raises(ValueError):
        collate_clouds([car_cloud(rng, 10)], 5)
    with pytest.raises(ValueError):
        collate_clouds([EnrichedCloud(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, bool))], 5)


def test_bad_frame_rejected():
    with pytest.raises(ValueError):
        small_regressor(frame="camera")


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_point_order_does_not_matter(seed):
    r = np.random.default_rng(seed)
    reg = small_regressor()
    cl = car_cloud(r, 12)
    f_img = r.normal(size=4)
    perm = r.permutation(12)
    shuffled = EnrichedCloud(cl.points[perm], cl.rgb[perm], cl.origin_mask[perm])
    a, b = regress_box(reg, cl, f_img).data, regress_box(reg, shuffled, f_img).data
    assert np.abs(a - b).max() < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_decoded_boxes_are_valid(seed):
    r = np.random.default_rng(seed)
    reg = small_regressor()
    raw = Tensor(r.normal(0, 3, (5, 8)))
    out = reg.decode(raw, r.normal(0, 10, (5, 3)), r.uniform(-np.pi, np.pi, 5)).data
    assert np.all(out[:, 3:6] > 0)
    assert np.all(out[:, 6] > -np.pi) and np.all(out[:, 6] <= np.pi)


def test_zero_raw_decodes_to_priors_at_centroid():
    reg = small_regressor()
    raw = np.zeros((1, 8))
    raw[0, 7] = 1.0  # heading (sin, cos) = (0, 1)
    out = reg.decode(Tensor(raw), np.array([[5.0, 5.0, -1.0]]), np.array([np.pi / 4])).data[0]
    np.testing.assert_allclose(out, [5.0, 5.0, -1.0, 1.5, 3.9, 1.6, np.pi / 4], atol=1e-12)


def test_params_to_box_wraps_yaw():
    b = params_to_box(np.array([1, 2, 3, 1, 1, 1, 3 * np.pi / 2]))
    assert b.yaw == pytest.approx(-np.pi / 2)


def test_box_loss_gradcheck(rng):
    reg = small_regressor()
    cl = car_cloud(rng, 8)
    f_img = rng.normal(size=4)
    params = [reg.head.layers[-1].weight, reg.head.layers[-1].bias, reg.encoder.layers[0].weight]
    assert check_gradients(lambda: box_loss(regress_box(reg, cl, f_img), GT), params) < 1e-4


def test_single_sample_overfit_decreases_every_epoch(rng):
    reg = small_regressor().assign_names("box")
    cl = car_cloud(rng)
    f_img = rng.normal(size=4)
    opt = Adam(reg.parameters(), lr=1e-3)
    losses = []
    for _ in range(20):
        opt.zero_grad()
        loss = box_loss(regress_box(reg, cl, f_img), GT)
        loss.backward()
        opt.step()
        losses.append(loss.item())
    assert all(b < a for a, b in zip(losses, losses[1:]))
