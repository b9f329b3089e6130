"""Gradient checks for the reverse-mode tape against central differences."""

import numpy as np
import pytest

from gridshare import autodiff as ad
from gridshare import nn

from _oracles import assert_grads_close, fd_gradient, flatten_grads


def run_check(ps, build_loss):
    ps.zero_grad()
    leaves = ps.tensors()
    loss = build_loss(leaves)
    loss.backward()
    nn.collect_grads(ps, leaves)
    analytic = flatten_grads(ps)

    def scalar():
        with ad.no_grad():
            return build_loss(ps.tensors()).item()

    fd = fd_gradient(ps, scalar)
    assert_grads_close(analytic, fd)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def test_quadratic_loss_gradient(rng):
    ps = nn.ParamSet()
    ps.add("x", rng.normal(size=(3, 4)))
    ps.zero_grad()
    leaves = ps.tensors()
    loss = ad.tsum(ad.square(leaves["x"]))
    loss.backward()
    nn.collect_grads(ps, leaves)
    np.testing.assert_allclose(ps["x"].grad, 2.0 * ps["x"].value, rtol=1e-12)


def test_constant_loss_zero_gradient(rng):
    ps = nn.ParamSet()
    ps.add("x", rng.normal(size=(2, 2)))
    leaves = ps.tensors()
    loss = ad.tsum(ad.mul(leaves["x"], 0.0))
    loss.backward()
    nn.collect_grads(ps, leaves)
    assert np.all(ps["x"].grad == 0.0)


def test_backward_rejects_non_scalar(rng):
    t = ad.Tensor(rng.normal(size=(3,)), requires_grad=True)
    with pytest.raises(ValueError):
        ad.add(t, 1.0).backward()


def test_matmul_add_tanh_gradient(rng):
    ps = nn.ParamSet()
    nn.add_dense(ps, rng, "l1", 4, 5)
    nn.add_dense(ps, rng, "l2", 5, 3)
    x = rng.normal(size=(6, 4))
    target = rng.normal(size=(6, 3))

    def loss_fn(leaves):
        out = nn.mlp_forward(leaves, ["l1", "l2"], x)
        return ad.tmean(ad.square(ad.sub(out, ad.constant(target))))

    run_check(ps, loss_fn)


def test_pointwise_ops_gradient(rng):
    ps = nn.ParamSet()
    ps.add("a", rng.normal(size=(4, 3)) + 2.5)  # keep log() away from 0
    ps.add("b", rng.normal(size=(4, 3)))

    def loss_fn(leaves):
        a, b = leaves["a"], leaves["b"]
        y = ad.add(ad.mul(ad.log(a), ad.sigmoid(b)), ad.exp(ad.mul(b, 0.3)))
        y = ad.sub(y, ad.div(a, ad.add(ad.square(b), 2.0)))
        return ad.tmean(y)

    run_check(ps, loss_fn)


def test_minmax_clip_gradient(rng):
    ps = nn.ParamSet()
    ps.add("a", rng.normal(size=(5, 4)))
    ps.add("b", rng.normal(size=(5, 4)))

    def loss_fn(leaves):
        a, b = leaves["a"], leaves["b"]
        y = ad.add(ad.maximum(a, b), ad.minimum(ad.mul(a, 0.5), b))
        return ad.tmean(ad.add(y, ad.clip(a, -0.5, 0.5)))

    run_check(ps, loss_fn)


def test_log_softmax_take_per_row_gradient(rng):
    ps = nn.ParamSet()
    ps.add("logits", rng.normal(size=(6, 5)))
    cols = rng.integers(0, 5, size=6)

    def loss_fn(leaves):
        return ad.tmean(ad.take_per_row(ad.log_softmax(leaves["logits"]), cols))

    run_check(ps, loss_fn)


def test_gather_rows_gradient_with_repeats(rng):
    ps = nn.ParamSet()
    ps.add("table", rng.normal(size=(4, 3)))
    idx = np.array([0, 2, 2, 1, 0, 0])

    def loss_fn(leaves):
        picked = ad.gather_rows(leaves["table"], idx)
        return ad.tsum(ad.square(picked))

    run_check(ps, loss_fn)


def test_concat_narrow_gradient(rng):
    ps = nn.ParamSet()
    ps.add("a", rng.normal(size=(3, 2)))
    ps.add("b", rng.normal(size=(3, 4)))

    def loss_fn(leaves):
        joined = ad.concat([leaves["a"], leaves["b"]], axis=1)
        left = ad.narrow(joined, 1, 1, 3)
        return ad.tmean(ad.mul(left, left))

    run_check(ps, loss_fn)


def test_broadcast_bias_gradient(rng):
    ps = nn.ParamSet()
    ps.add("bias", rng.normal(size=(4,)))
    x = rng.normal(size=(7, 4))

    def loss_fn(leaves):
        return ad.tmean(ad.square(ad.add(ad.constant(x), leaves["bias"])))

    run_check(ps, loss_fn)


def test_sum_axis_gradients(rng):
    ps = nn.ParamSet()
    ps.add("a", rng.normal(size=(3, 5)))

    def loss_fn(leaves):
        rows = ad.tsum(leaves["a"], axis=1)
        return ad.tmean(ad.square(rows))

    run_check(ps, loss_fn)


def test_non_finite_detection():
    with pytest.raises(FloatingPointError):
        ad.log(ad.Tensor(np.array([0.0]), requires_grad=True))


def test_no_grad_suppresses_tracking(rng):
    t = ad.Tensor(rng.normal(size=(3,)), requires_grad=True)
    with ad.no_grad():
        out = ad.tanh(t)
    assert out.requires_grad is False
    assert out._backward is None


def test_forward_identical_inside_and_outside_no_grad(rng):
    x = rng.normal(size=(4, 4))
    t = ad.Tensor(x, requires_grad=True)
    y1 = ad.tanh(ad.matmul(t, t)).data
    with ad.no_grad():
        y2 = ad.tanh(ad.matmul(ad.Tensor(x, requires_grad=True), ad.Tensor(x))).data
    assert np.array_equal(y1, y2)
