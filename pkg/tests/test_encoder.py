"""Trajectory encoder: embeddings, reparameterized sampling, gradients."""

import numpy as np
import pytest

from gridshare import autodiff as ad
from gridshare import encoder as enc
from gridshare import nn

from _oracles import assert_grads_close, fd_gradient, flatten_grads


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def small_encoder(rng, input_dim=3, hidden=4, latent=2):
    """Shrunken encoder sharing the production wiring, for cheap FD sweeps."""
    ps = nn.ParamSet()
    ps.add("wx", nn.dense_init(rng, input_dim, 4 * hidden))
    ps.add("wh", nn.dense_init(rng, hidden, 4 * hidden))
    bias = np.zeros(4 * hidden)
    bias[hidden:2 * hidden] = 1.0
    ps.add("b", bias)
    nn.add_dense(ps, rng, "mu", hidden, latent)
    nn.add_dense(ps, rng, "lv", hidden, latent)
    nn.add_dense(ps, rng, "dec", hidden + latent, input_dim)
    return ps


def test_zero_weight_encoder_emits_bias_embedding(rng):
    ps = enc.make_encoder(rng, 5)
    for p in ps.params.values():
        p.value[...] = 0.0
    ps["lv.b"].value[...] = -3.0
    emb = enc.lstm_encode(ps, rng.normal(size=(4, 5)))
    np.testing.assert_array_equal(emb.mean, np.zeros(enc.LATENT_DIM))
    np.testing.assert_array_equal(emb.logvar, np.full(enc.LATENT_DIM, -3.0))


def test_identical_windows_identical_embeddings(rng):
    ps = enc.make_encoder(rng, 6)
    window = rng.normal(size=(5, 6))
    a = enc.lstm_encode(ps, window)
    b = enc.lstm_encode(ps, window.copy())
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.logvar, b.logvar)


def test_empty_window_default_embedding(rng):
    ps = enc.make_encoder(rng, 6)
    emb = enc.lstm_encode(ps, np.zeros((0, 6)))
    assert np.all(emb.mean == 0.0) and np.all(emb.logvar == 0.0)


def test_logvar_always_clamped(rng):
    ps = enc.make_encoder(rng, 4)
    ps["lv.b"].value[...] = 500.0  # force the pre-clamp value far out of range
    emb = enc.lstm_encode(ps, rng.normal(size=(6, 4)))
    assert np.all(emb.logvar <= enc.LOGVAR_MAX)
    ps["lv.b"].value[...] = -500.0
    emb = enc.lstm_encode(ps, rng.normal(size=(6, 4)))
    assert np.all(emb.logvar >= enc.LOGVAR_MIN)


def test_batch_encode_matches_single_encode(rng):
    ps = enc.make_encoder(rng, 5)
    windows = rng.normal(size=(3, 4, 5))
    means, logvars = enc.encode_batch(ps, windows)
    for i in range(3):
        single = enc.lstm_encode(ps, windows[i])
        np.testing.assert_allclose(means[i], single.mean, rtol=1e-12)
        np.testing.assert_allclose(logvars[i], single.logvar, rtol=1e-12)


def test_reparameterized_sample_value_and_gradients(rng):
    mean_val = rng.normal(size=(1, 3))
    logvar_val = rng.normal(size=(1, 3))
    noise = rng.normal(size=(1, 3))

    ps = nn.ParamSet()
    ps.add("mean", mean_val)
    ps.add("logvar", logvar_val)
    leaves = ps.tensors()
    sample = enc.sample_embedding(leaves["mean"], leaves["logvar"], noise)
    np.testing.assert_allclose(sample.data, mean_val + np.exp(logvar_val / 2) * noise)
    loss = ad.tsum(sample)
    loss.backward()
    nn.collect_grads(ps, leaves)
    np.testing.assert_allclose(ps["mean"].grad, np.ones((1, 3)))
    np.testing.assert_allclose(ps["logvar"].grad, noise * np.exp(logvar_val / 2) / 2.0,
                               rtol=1e-12)

    def scalar():
        with ad.no_grad():
            lv = ps.tensors()
            return ad.tsum(enc.sample_embedding(lv["mean"], lv["logvar"], noise)).item()

    fd = fd_gradient(ps, scalar)
    assert_grads_close(flatten_grads(ps), fd)


def test_encoder_loss_gradients_match_finite_differences(rng, monkeypatch):
    # shrink the module dims so the LSTM slicing matches the small net
    monkeypatch.setattr(enc, "LSTM_HIDDEN", 4)
    monkeypatch.setattr(enc, "LATENT_DIM", 2)
    ps = small_encoder(rng)
    windows = rng.normal(size=(2, 3, 3))
    noise = rng.normal(size=(2, 2))

    ps.zero_grad()
    leaves = ps.tensors()
    loss = enc.encoder_loss(leaves, windows, noise, kl_weight=0.1)
    loss.backward()
    nn.collect_grads(ps, leaves)

    def scalar():
        with ad.no_grad():
            return enc.encoder_loss(ps.tensors(), windows, noise, kl_weight=0.1).item()

    fd = fd_gradient(ps, scalar)
    assert_grads_close(flatten_grads(ps), fd)


def test_encoder_training_reduces_loss(rng):
    ps = enc.make_encoder(rng, 6)
    windows = rng.normal(size=(4, 5, 6)) * 0.3
    noise_rng = np.random.default_rng(0)
    first = enc.encoder_train_step(ps, windows, noise_rng, lr=3e-3)
    losses = [enc.encoder_train_step(ps, windows, noise_rng, lr=3e-3) for _ in range(60)]
    assert np.mean(losses[-10:]) < first


def test_single_step_window_trains_on_kl_only(rng):
    ps = enc.make_encoder(rng, 4)
    windows = rng.normal(size=(2, 1, 4))
    noise = np.zeros((2, enc.LATENT_DIM))
    with ad.no_grad():
        loss = enc.encoder_loss(ps.tensors(), windows, noise, kl_weight=1.0)
        means, logvars = enc.encode_batch(ps, windows)
    expected = 0.5 * np.mean(means ** 2 + np.exp(logvars) - 1.0 - logvars)
    assert loss.item() == pytest.approx(expected, rel=1e-9)
