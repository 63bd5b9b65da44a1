import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mapgen.autodiff import (
    Adam,
    CheckpointError,
    GraphError,
    Parameter,
    ShapeError,
    Tensor,
    adam_step,
    balanced_cross_entropy,
    class_weights,
    concat,
    layer_norm,
    matmul,
    mlp_forward,
    smooth_l1,
    softmax,
    sqrt,
    tanh,
    load_checkpoint,
    save_checkpoint,
)
from mapgen.autodiff.checkpoint import decode_checkpoint
from mapgen.autodiff.gradcheck import check_gradients, numeric_grad, relative_error

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def leaf(a):
    return Tensor(np.array(a, dtype=float), requires_grad=True)


def test_matmul_examples():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), Tensor(a)).data, a)
    out = matmul(Tensor([[1.0, 0.0], [0.0, 0.0]]), Tensor([[5.0], [7.0]]))
    np.testing.assert_array_equal(out.data, [[5.0], [0.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_gradient(rng):
    a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
    assert check_gradients(lambda: matmul(a, b).sum(), [a, b]) < 1e-6


def test_matmul_batched_broadcast_gradient(rng):
    a, b = leaf(rng.normal(size=(2, 3, 4))), leaf(rng.normal(size=(4, 5)))
    assert check_gradients(lambda: (matmul(a, b) ** 2).sum(), [a, b]) < 1e-6


def test_softmax_examples():
    np.testing.assert_allclose(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(softmax(Tensor([0.0, math.log(3.0)])).data, [0.25, 0.75], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), finite)
def test_softmax_rows_and_shift(x, c):
    p = softmax(Tensor(x), axis=-1).data
    assert np.all(p > 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(softmax(Tensor(x + c), axis=-1).data, p, atol=1e-12)


def test_concat_examples():
    out = concat([Tensor([[1.0], [2.0]]), Tensor([[3.0], [4.0]])], axis=1)
    np.testing.assert_array_equal(out.data, [[1, 3], [2, 4]])
    single = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(concat([Tensor(single)], axis=0).data, single)
    with pytest.raises(ShapeError):
        concat([Tensor(np.zeros((2, 1))), Tensor(np.zeros((3, 2)))], axis=1)


def test_concat_gradient(rng):
    a, b = leaf(rng.normal(size=(2, 3))), leaf(rng.normal(size=(2, 2)))
    w = rng.normal(size=(2, 5))
    assert check_gradients(lambda: (concat([a, b], axis=1) * w).sum(), [a, b]) < 1e-6


def test_mlp_examples(rng):
    x = rng.normal(size=(4, 3))
    zero = [(Tensor(np.zeros((3, 5))), Tensor(np.zeros(5))), (Tensor(np.zeros((5, 2))), Tensor(np.zeros(2)))]
    np.testing.assert_array_equal(mlp_forward(zero, x).data, np.zeros((4, 2)))
    ident = [(Tensor(np.eye(3)), Tensor(np.zeros(3)))]
    np.testing.assert_array_equal(mlp_forward(ident, x).data, x)
    with pytest.raises(ShapeError):
        mlp_forward([(Tensor(np.zeros((4, 2))), Tensor(np.zeros(2)))], x)


def test_mlp_two_layer_gradient(rng):
    w1, b1 = leaf(rng.normal(size=(3, 6))), leaf(rng.normal(size=6))
    w2, b2 = leaf(rng.normal(size=(6, 2))), leaf(rng.normal(size=2))
    x = leaf(rng.normal(size=(5, 3)))
    err = check_gradients(lambda: (mlp_forward([(w1, b1), (w2, b2)], x) ** 2).sum(), [w1, b1, w2, b2, x])
    assert err < 1e-5


@pytest.mark.parametrize("x, expected", [(0.0, 0.0), (0.5, 0.125), (2.0, 1.5), (-2.0, 1.5)])
def test_smooth_l1_examples(x, expected):
    assert smooth_l1(Tensor([x]), Tensor([0.0])).item() == pytest.approx(expected, abs=1e-15)


def test_smooth_l1_shape_mismatch():
    with pytest.raises(ShapeError):
        smooth_l1(Tensor(np.zeros(3)), Tensor(np.zeros(2)))


def test_balanced_cross_entropy_examples():
    assert balanced_cross_entropy(Tensor([[-20.0, 20.0], [20.0, -20.0]]), [1, 0], (1, 1)).item() < 1e-6
    uniform = balanced_cross_entropy(Tensor(np.zeros((4, 2))), [0, 1, 1, 0], (1.0, 1.0)).item()
    assert uniform == pytest.approx(math.log(2.0), abs=1e-15)


def test_balanced_cross_entropy_weighted_rows():
    # per-row NLLs log1p(e^-1), log1p(e^-2), ln 2 computed with the math module, weights 2/1/2
    logits = Tensor([[0.0, 1.0], [2.0, 0.0], [0.0, 0.0]])
    got = balanced_cross_entropy(logits, [1, 0, 1], (2.0, 1.0)).item()
    assert got == pytest.approx(0.42794914943986173, abs=1e-14)


def test_balanced_cross_entropy_empty_batch():
    logits = leaf(np.zeros((0, 2)))
    loss = balanced_cross_entropy(logits, np.zeros(0), (1.0, 1.0))
    assert loss.item() == 0.0
    loss.backward()
    assert logits.grad is None or not logits.grad.any()


def test_class_weights_population_balance():
    assert class_weights(np.array([1, 0, 0, 0])) == (2.0, pytest.approx(4 / 6))
    assert class_weights(np.zeros(5)) == (10.0, 0.5)


def test_backward_examples():
    x = leaf([1.0, 2.0, 3.0])
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones(3))
    unused = Parameter(np.ones(2), name="unused")
    y = leaf([1.0])
    (y * 3.0).sum().backward()
    assert unused.grad is None or not unused.grad.any()


def test_backward_requires_scalar():
    with pytest.raises(GraphError):
        leaf([1.0, 2.0]).backward()


def test_backward_accumulates_without_zeroing():
    x = leaf([2.0])
    (x * x).sum().backward()
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, [8.0])


def test_tensor_used_twice_matches_finite_differences(rng):
    x = leaf(rng.normal(size=(4,)))
    assert check_gradients(lambda: (x * x.sum() + softmax(x)).sum(), [x]) < 1e-7


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_elementwise_chain_gradcheck(n, k, seed):
    r = np.random.default_rng(seed)
    a = leaf(r.normal(size=(n, k)))
    b = leaf(r.uniform(0.5, 2.0, size=(n, k)))
    g = leaf(r.normal(size=(k,)))

    w = r.normal(size=(n, k))

    def loss():
        h = layer_norm(tanh(a * b) - a / b + g, Tensor(np.ones(k)), Tensor(np.zeros(k)))
        return (softmax(h, axis=-1) * w).sum() + sqrt(b).mean()

    assert check_gradients(loss, [a, b, g]) < 1e-4


def test_relative_error_floor():
    assert relative_error(np.zeros(3), np.full(3, 1e-9)) == 0.0
    assert relative_error(np.array([1.0]), np.array([0.0])) == 1.0


def test_numeric_grad_restores_input():
    arr = np.array([1.0, -2.0])
    before = arr.copy()
    g = numeric_grad(lambda: float((arr ** 2).sum()), arr)
    np.testing.assert_allclose(g, 2 * before, atol=1e-8)
    np.testing.assert_array_equal(arr, before)


def test_adam_zero_gradient_is_a_no_op():
    p = np.array([1.0, -3.0])
    m, v = np.zeros(2), np.zeros(2)
    adam_step(p, np.zeros(2), m, v, 1, 0.1)
    np.testing.assert_array_equal(p, [1.0, -3.0])
    adam_step(p, np.zeros(2), m, v, 2, 0.1, weight_decay=0.5)
    np.testing.assert_allclose(p, [0.95, -2.85])


def test_adam_first_steps_match_closed_form():
    # with a constant gradient the bias-corrected moments are g and g^2, so each step moves lr*g/(|g|+eps)
    p = Parameter(np.array([0.5, 0.5]), name="p")
    opt = Adam([p], lr=0.01)
    for _ in range(3):
        p.grad = np.array([2.0, -0.5])
        opt.step()
    expected = 0.5 - 3 * 0.01 * np.array([2.0 / (2.0 + 1e-8), -0.5 / (0.5 + 1e-8)])
    np.testing.assert_allclose(p.data, expected, rtol=0, atol=1e-15)


def test_adam_state_round_trip():
    p = Parameter(np.array([1.0]), name="w")
    opt = Adam([p])
    p.grad = np.array([1.0])
    opt.step()
    other = Adam([Parameter(np.array([1.0]), name="w")])
    other.load_state(opt.state())
    assert other.t == 1 and other.m["w"][0] == opt.m["w"][0]


def test_checkpoint_round_trip_bit_exact(tmp_path, rng):
    params = {"a.weight": rng.normal(size=(3, 4)), "b": np.array(np.pi), "é.bias": rng.normal(size=7),
              "tiny": np.array([5e-324, -0.0, np.finfo(float).max])}
    path = tmp_path / "m.mgck"
    save_checkpoint(path, params)
    back = load_checkpoint(path)
    assert list(back) == list(params)
    for k in params:
        assert back[k].tobytes() == np.asarray(params[k], dtype="<f8").tobytes()
        assert back[k].shape == np.shape(params[k])
    save_checkpoint(tmp_path / "again.mgck", back)
    assert (tmp_path / "again.mgck").read_bytes() == path.read_bytes()


def test_checkpoint_header_layout(tmp_path):
    save_checkpoint(tmp_path / "m.mgck", {"w": np.ones((2, 3))})
    raw = (tmp_path / "m.mgck").read_bytes()
    assert raw[:4] == b"MGCK"
    assert struct.unpack("<II", raw[4:12]) == (1, 1)
    assert struct.unpack("<H", raw[12:14]) == (1,)
    assert raw[14:15] == b"w" and raw[15] == 2
    assert struct.unpack("<II", raw[16:24]) == (2, 3)
    assert len(raw) == 24 + 6 * 8


def test_checkpoint_errors(tmp_path):
    save_checkpoint(tmp_path / "m.mgck", {"w": np.ones(4)})
    raw = (tmp_path / "m.mgck").read_bytes()
    for cut in (2, 10, len(raw) - 1):
        with pytest.raises(CheckpointError):
            decode_checkpoint(raw[:cut])
    with pytest.raises(CheckpointError, match="magic"):
        decode_checkpoint(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError, match="trailing"):
        decode_checkpoint(raw + b"\0")
