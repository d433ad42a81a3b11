"""Tape semantics and per-op gradients against central finite differences."""

import numpy as np
import pytest

from m2unet import checks, engine, ops
from m2unet.engine import Tensor, backward
from m2unet.errors import UsageError
from m2unet.gradcheck import check_scalar_fn, finite_difference, max_relative_error


def test_square_gradient(f64):
    x = Tensor(np.array([3.0]), requires_grad=True)
    grads = backward(ops.mul(x, x))
    np.testing.assert_allclose(grads[x].data, [6.0])


def test_elementwise_product_sum_gradient(f64):
    rng = np.random.default_rng(0)
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    grads = backward(ops.sum_(ops.mul(a, b)))
    np.testing.assert_array_equal(grads[a].data, b.data)
    np.testing.assert_array_equal(grads[b].data, a.data)


def test_fanout_accumulates_both_paths(f64):
    # x feeds two consumers; matches finite differences only if both
    # contributions are summed
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((4,)), requires_grad=True)
    c = Tensor(rng.standard_normal((4,)))

    def f():
        left = ops.mul(x, c)
        right = ops.mul(x, x)
        return ops.sum_(ops.add(left, right))

    err = check_scalar_fn(f, [x])
    assert err < 1e-8


def test_nonscalar_root_rejected(f64):
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    y = ops.mul(x, x)
    with pytest.raises(UsageError):
        backward(y)


def test_unused_parameter_gets_zeros(f64):
    x = Tensor(np.ones(3), requires_grad=True)
    unused = Tensor(np.ones((2, 2)), requires_grad=True)
    grads = backward(ops.sum_(x), params=[x, unused])
    assert grads[unused].shape == (2, 2)
    assert not grads[unused].data.any()


def test_grad_shapes_match_parameters(f64):
    rng = np.random.default_rng(2)
    x = Tensor(rng.standard_normal((2, 3, 3, 2)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 3, 2, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal(4), requires_grad=True)
    out = ops.conv2d(x, w, b, ops.ConvSpec(3, 3, 1, "same", 1))
    grads = backward(ops.sum_(out))
    assert grads[x].shape == x.shape
    assert grads[w].shape == w.shape
    assert grads[b].shape == b.shape


def test_no_grad_blocks_taping():
    x = Tensor(np.ones(3), requires_grad=True)
    with engine.no_grad():
        y = ops.mul(x, x)
    assert y.node is None and not y.requires_grad


def test_backward_visits_diamond_once(f64):
    # diamond: two paths from x to the root; FD is the referee
    x = Tensor(np.array([0.7, -1.2, 0.4]), requires_grad=True)

    def f():
        s = ops.sigmoid(x)
        g = ops.gelu(x)
        return ops.sum_(ops.mul(s, g))

    assert check_scalar_fn(f, [x]) < 1e-8


def test_jaccard_loss_gradient_matches_fd(f64):
    from m2unet.losses import jaccard_loss
    rng = np.random.default_rng(3)
    y = Tensor((rng.random((4, 4)) > 0.5).astype(np.float64))
    p = Tensor(rng.uniform(0.1, 0.9, (4, 4)), requires_grad=True)
    loss = jaccard_loss(y, p)
    analytic = backward(loss)[p].data
    numeric = finite_difference(lambda: jaccard_loss(y, p), p)
    assert max_relative_error(analytic, numeric) < 1e-4


@pytest.mark.parametrize("case", checks.suites()["ops"], ids=lambda c: c[0])
def test_op_gradients_fd(case, f64):
    name, fn, tol = case
    worst = max(fn(seed) for seed in range(3))
    assert worst < tol, f"{name}: max rel err {worst}"
