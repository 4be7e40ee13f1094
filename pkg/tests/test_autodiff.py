import zlib

import numpy as np
import pytest

from reinead.autodiff import SGD, Linear, ShapeError, Tensor, check_gradients, no_grad, ops, precision
from reinead.autodiff.ops import SampleGrid


def t64(rng, *shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, shape), requires_grad=True, dtype=np.float64)


def _away_from(x, points, margin=1e-3):
    # keep samples off kinks so central differences stay valid
    for p in points:
        near = np.abs(x.data - p) < margin
        x.data[near] += 2 * margin
    return x


def case_add(rng):
    a, b = t64(rng, 3, 4), t64(rng, 4)
    return lambda: ops.add(a, b) * ops.add(a, b), [a, b]


def case_sub(rng):
    a, b = t64(rng, 2, 3), t64(rng, 2, 1)
    return lambda: ops.sub(a, b) * a, [a, b]


def case_mul(rng):
    a, b = t64(rng, 3, 2), t64(rng, 1, 2)
    return lambda: ops.mul(a, b), [a, b]


def case_div(rng):
    a, b = t64(rng, 3), t64(rng, 3, low=0.5, high=2.0)
    return lambda: ops.div(a, b), [a, b]


def case_matmul(rng):
    a, b = t64(rng, 3, 4), t64(rng, 4, 2)
    return lambda: ops.matmul(a, b) * ops.matmul(a, b), [a, b]


def case_batched_matmul(rng):
    a, b = t64(rng, 2, 3, 4), t64(rng, 4, 5)
    return lambda: ops.tanh(ops.matmul(a, b)), [a, b]


def case_conv2d(rng):
    x, w, b = t64(rng, 2, 6, 6, 2), t64(rng, 3, 3, 2, 3), t64(rng, 3)
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    return lambda: ops.tanh(ops.conv2d(x, w, b, stride=stride, padding=pad)), [x, w, b]


def case_relu(rng):
    x = _away_from(t64(rng, 4, 3), [0.0])
    return lambda: ops.relu(x) * x, [x]


def case_tanh(rng):
    x = t64(rng, 5)
    return lambda: ops.tanh(x), [x]


def case_sigmoid(rng):
    x = t64(rng, 5, low=-4, high=4)
    return lambda: ops.sigmoid(x), [x]


def case_exp(rng):
    x = t64(rng, 5)
    return lambda: ops.exp(x), [x]


def case_log(rng):
    x = t64(rng, 5, low=0.2, high=3.0)
    return lambda: ops.log(x), [x]


def case_softmax(rng):
    x = t64(rng, 3, 4, low=-3, high=3)
    c = Tensor(rng.normal(size=(3, 4)), dtype=np.float64)
    return lambda: ops.softmax(x) * c, [x]


def case_log_softmax(rng):
    x = t64(rng, 2, 5, low=-3, high=3)
    c = Tensor(rng.normal(size=(2, 5)), dtype=np.float64)
    return lambda: ops.log_softmax(x) * c, [x]


def case_sum(rng):
    x = t64(rng, 3, 4)
    return lambda: ops.sum(x * x, axis=1) * ops.sum(x, axis=1), [x]


def case_mean(rng):
    x = t64(rng, 3, 4)
    return lambda: ops.mean(x * x, axis=0, keepdims=True) * ops.mean(x), [x]


def case_bilinear(rng):
    tex = t64(rng, 5, 6, 3)
    rows = rng.uniform(-0.5, 4.5, (4, 4))
    cols = rng.uniform(-0.5, 5.5, (4, 4))
    grid = SampleGrid(rows, cols, (5, 6))
    c = Tensor(rng.normal(size=(4, 4, 3)), dtype=np.float64)
    return lambda: ops.bilinear_sample(tex, grid) * c, [tex]


def case_concat(rng):
    a, b = t64(rng, 2, 3), t64(rng, 2, 2)
    w = Tensor(rng.normal(size=(5, 2)), dtype=np.float64)
    return lambda: ops.tanh(ops.matmul(ops.concat([a, b], axis=1), w)), [a, b]


def case_clamp(rng):
    x = _away_from(t64(rng, 6, low=-2, high=2), [-0.5, 0.5])
    return lambda: ops.clamp(x, -0.5, 0.5) * x, [x]


def case_place(rng):
    base, patch = t64(rng, 5, 5, 2), t64(rng, 2, 3, 2)
    c = Tensor(rng.normal(size=(5, 5, 2)), dtype=np.float64)
    return lambda: ops.place(base, patch, 1, 2) * c, [base, patch]


def case_getitem_reshape_transpose(rng):
    x = t64(rng, 3, 4)
    return lambda: ops.transpose(ops.reshape(x, (2, 6)))[1:4] * 2.0, [x]


def case_power(rng):
    x = t64(rng, 4, low=0.5, high=2.0)
    return lambda: ops.power(x, 2.5), [x]


def case_cross_entropy(rng):
    x = t64(rng, 4, 3, low=-2, high=2)
    y = rng.integers(0, 3, 4)
    return lambda: ops.cross_entropy(x, y), [x]


def case_entropy(rng):
    x = t64(rng, 4, 3, low=-2, high=2)
    return lambda: ops.entropy(x), [x]


def case_stack_neg(rng):
    a, b = t64(rng, 3, 2), t64(rng, 3, 2)
    return lambda: ops.stack([a, ops.neg(b) * a], axis=1), [a, b]


CASES = [
    case_add, case_sub, case_mul, case_div, case_matmul, case_batched_matmul, case_conv2d, case_relu,
    case_tanh, case_sigmoid, case_exp, case_log, case_softmax, case_log_softmax, case_sum, case_mean,
    case_bilinear, case_concat, case_clamp, case_place, case_getitem_reshape_transpose, case_power,
    case_cross_entropy, case_entropy, case_stack_neg,
]


@pytest.mark.parametrize("case", CASES, ids=lambda c: c.__name__[5:])
def test_op_matches_finite_differences(case):
    rng = np.random.default_rng(zlib.crc32(case.__name__.encode()))
    worst = 0.0
    with precision(np.float64):
        for _ in range(20):
            fn, inputs = case(rng)
            worst = max(worst, check_gradients(fn, inputs, eps=1e-5))
    assert worst < 1e-4


def test_three_layer_network_gradient():
    rng = np.random.default_rng(3)
    with precision(np.float64):
        layers = [Linear(5, 8, rng), Linear(8, 6, rng), Linear(6, 3, rng)]
        for layer in layers:
            layer.astype(np.float64)
        x = Tensor(rng.normal(size=(4, 5)))
        y = rng.integers(0, 3, 4)

        def fn():
            h = ops.tanh(layers[0](x))
            h = ops.sigmoid(layers[1](h))
            return ops.mean(ops.cross_entropy(layers[2](h), y))

        params = [p for layer in layers for p in layer.parameters()]
        assert check_gradients(fn, params) < 1e-4


def test_trivial_examples():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ops.matmul(Tensor(np.eye(2)), Tensor(a)).data, a)
    np.testing.assert_allclose(ops.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-7)
    tex = Tensor(np.arange(24, dtype=float).reshape(4, 6, 1))
    grid = SampleGrid(np.array([2.0]), np.array([3.0]), (4, 6))
    assert ops.bilinear_sample(tex, grid).data[0, 0] == tex.data[2, 3, 0]


def test_backward_analytic_and_accumulation():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    ops.sum(x).backward()
    np.testing.assert_array_equal(x.grad, [1, 1, 1])
    x.zero_grad()
    ops.sum(x * x).backward()
    np.testing.assert_array_equal(x.grad, [2, 4, 6])
    ops.sum(x * x).backward()
    np.testing.assert_array_equal(x.grad, [4, 8, 12])


def test_non_scalar_backward_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4,\)"):
        ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(4)))


def test_softmax_rows_normalized():
    rng = np.random.default_rng(0)
    p = ops.softmax(Tensor(rng.normal(scale=5, size=(50, 7)))).data
    assert (p >= 0).all()
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_backward_is_deterministic():
    def run():
        rng = np.random.default_rng(11)
        x = Tensor(rng.normal(size=(2, 8, 8, 3)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 3, 3, 4)), requires_grad=True)
        ops.sum(ops.tanh(ops.conv2d(x, w, stride=2, padding=1))).backward()
        return x.grad.copy(), w.grad.copy()

    a, b = run(), run()
    for u, v in zip(a, b):
        assert u.tobytes() == v.tobytes()


def test_no_grad_builds_no_graph():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = x * 3.0
    assert not y.requires_grad and y.is_leaf


def test_default_precision_is_float32():
    assert Tensor([1.0]).dtype == np.float32
    with precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64


def test_sgd_momentum_step():
    p = Tensor([1.0], requires_grad=True)
    opt = SGD([p], lr=0.1, momentum=0.9)
    p.grad = np.array([1.0], dtype=np.float32)
    opt.step()
    np.testing.assert_allclose(p.data, [0.9])
    opt.step()  # velocity 1.9
    np.testing.assert_allclose(p.data, [0.71], rtol=1e-6)
