"""Optimizer and parameter-set contracts."""

import numpy as np
import pytest

from gridshare import nn


@pytest.fixture
def rng():
    return np.random.default_rng(13)


def test_adam_zero_gradients_fresh_moments_leave_params_unchanged(rng):
    ps = nn.ParamSet()
    ps.add("w", rng.normal(size=(3, 3)))
    before = ps["w"].value.copy()
    ps.zero_grad()
    nn.adam_update(ps, lr=1e-2)
    np.testing.assert_array_equal(ps["w"].value, before)


def test_adam_first_step_is_signed_learning_rate(rng):
    ps = nn.ParamSet()
    ps.add("x", np.array([1.0, -2.0]))
    ps["x"].grad[...] = np.array([0.5, -3.0])
    nn.adam_update(ps, lr=0.1)
    # bias-corrected first step moves by ~lr * sign(grad)
    np.testing.assert_allclose(ps["x"].value, [1.0 - 0.1, -2.0 + 0.1], atol=1e-6)


def test_adam_descends_quadratic(rng):
    ps = nn.ParamSet()
    ps.add("x", np.array([1.0]))
    for _ in range(10):
        ps.zero_grad()
        ps["x"].grad[...] = 2.0 * ps["x"].value  # d/dx x^2
        nn.adam_update(ps, lr=0.1)
    assert abs(ps["x"].value[0]) < 1.0


def test_adam_moments_persist_across_calls(rng):
    ps = nn.ParamSet()
    ps.add("x", np.array([0.0]))
    ps["x"].grad[...] = 1.0
    nn.adam_update(ps, lr=0.1)
    assert ps["x"].step == 1 and ps["x"].m[0] != 0.0
    nn.adam_update(ps, lr=0.1)
    assert ps["x"].step == 2


def test_adam_group_rates(rng):
    ps = nn.ParamSet()
    ps.add("p", np.array([0.0]), group="policy")
    ps.add("v", np.array([0.0]), group="value")
    ps["p"].grad[...] = 1.0
    ps["v"].grad[...] = 1.0
    nn.adam_update(ps, lr={"policy": 0.1, "value": 0.3})
    assert ps["p"].value[0] == pytest.approx(-0.1, abs=1e-6)
    assert ps["v"].value[0] == pytest.approx(-0.3, abs=1e-6)


def test_adam_rejects_non_finite_gradient(rng):
    ps = nn.ParamSet()
    ps.add("x", np.array([0.0]))
    ps["x"].grad[...] = np.nan
    with pytest.raises(FloatingPointError):
        nn.adam_update(ps, lr=0.1)


def test_clone_is_deep_and_resets_optimizer_state(rng):
    src = nn.ParamSet()
    src.add("w", rng.normal(size=(2, 2)))
    src["w"].grad[...] = 1.0
    nn.adam_update(src, lr=0.1)  # give the source nonzero moments
    clone = nn.clone_params(src)
    np.testing.assert_array_equal(clone["w"].value, src["w"].value)
    assert clone["w"].step == 0
    assert np.all(clone["w"].m == 0.0) and np.all(clone["w"].v == 0.0)
    clone["w"].value[...] = 99.0
    assert not np.array_equal(clone["w"].value, src["w"].value)


def test_clone_of_clone_matches_original_values(rng):
    src = nn.ParamSet()
    src.add("w", rng.normal(size=(4,)))
    twice = nn.clone_params(nn.clone_params(src))
    np.testing.assert_array_equal(twice["w"].value, src["w"].value)


def test_clone_forward_equivalence(rng):
    from gridshare import models
    trunk = models.make_trunk(rng, 5)
    clone = nn.clone_params(trunk)
    x = rng.normal(size=(3, 5))
    np.testing.assert_array_equal(models.trunk_forward_np(trunk, x),
                                  models.trunk_forward_np(clone, x))


def test_duplicate_param_name_rejected(rng):
    ps = nn.ParamSet()
    ps.add("w", np.zeros(2))
    with pytest.raises(ValueError):
        ps.add("w", np.zeros(2))
