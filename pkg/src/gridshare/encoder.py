"""Recurrent trajectory encoder producing a diagonal-Gaussian embedding.

Each agent's recent window of (local state, action, reward) tuples is run
through an LSTM; the final hidden state maps to the mean and log-variance
of a 16-d Gaussian. The embedding distributions drive group clustering.

Training signal: teacher-forced next-tuple prediction from the hidden
state concatenated with a reparameterized sample of the embedding, plus a
standard-normal KL regularizer on the embedding distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn

LSTM_HIDDEN = 128
LATENT_DIM = 16
LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0


@dataclass
class GaussianEmbedding:
    """Diagonal Gaussian over the trajectory latent space."""

    mean: np.ndarray
    logvar: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.logvar = np.asarray(self.logvar, dtype=np.float64)
        if self.mean.shape != self.logvar.shape:
            raise ValueError("mean/logvar shape mismatch")

    @property
    def var(self) -> np.ndarray:
        return np.exp(self.logvar)


def make_encoder(rng: np.random.Generator, input_dim: int) -> nn.ParamSet:
    ps = nn.ParamSet()
    ps.add("wx", nn.dense_init(rng, input_dim, 4 * LSTM_HIDDEN))
    ps.add("wh", nn.dense_init(rng, LSTM_HIDDEN, 4 * LSTM_HIDDEN))
    bias = np.zeros(4 * LSTM_HIDDEN)
    bias[LSTM_HIDDEN:2 * LSTM_HIDDEN] = 1.0  # forget gate starts open
    ps.add("b", bias)
    nn.add_dense(ps, rng, "mu", LSTM_HIDDEN, LATENT_DIM)
    nn.add_dense(ps, rng, "lv", LSTM_HIDDEN, LATENT_DIM)
    nn.add_dense(ps, rng, "dec", LSTM_HIDDEN + LATENT_DIM, input_dim)
    return ps


def _lstm_cell(leaves, x_t: ad.Tensor, h: ad.Tensor, c: ad.Tensor):
    gates = ad.add(ad.add(ad.matmul(x_t, leaves["wx"]), ad.matmul(h, leaves["wh"])), leaves["b"])
    i = ad.sigmoid(ad.narrow(gates, 1, 0, LSTM_HIDDEN))
    f = ad.sigmoid(ad.narrow(gates, 1, LSTM_HIDDEN, LSTM_HIDDEN))
    g = ad.tanh(ad.narrow(gates, 1, 2 * LSTM_HIDDEN, LSTM_HIDDEN))
    o = ad.sigmoid(ad.narrow(gates, 1, 3 * LSTM_HIDDEN, LSTM_HIDDEN))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


def _run_lstm(leaves, windows: np.ndarray):
    """windows: [B, L, F]. Returns (hidden states per step, final hidden)."""
    b, length, _ = windows.shape
    h = ad.constant(np.zeros((b, LSTM_HIDDEN)))
    c = ad.constant(np.zeros((b, LSTM_HIDDEN)))
    hs = []
    for t in range(length):
        h, c = _lstm_cell(leaves, ad.constant(windows[:, t, :]), h, c)
        hs.append(h)
    return hs, h


def encode_batch(ps: nn.ParamSet, windows: np.ndarray):
    """Encode a batch of equal-length windows into (means, logvars) arrays."""
    if windows.ndim != 3:
        raise ValueError("expected [batch, steps, features]")
    if windows.shape[1] == 0:
        b = windows.shape[0]
        return np.zeros((b, LATENT_DIM)), np.zeros((b, LATENT_DIM))
    with ad.no_grad():
        leaves = ps.tensors()
        _, h = _run_lstm(leaves, windows)
        mean = nn.dense(leaves, "mu", h)
        logvar = ad.clip(nn.dense(leaves, "lv", h), LOGVAR_MIN, LOGVAR_MAX)
    return mean.data, logvar.data


def lstm_encode(ps: nn.ParamSet, window: np.ndarray) -> GaussianEmbedding:
    """Encode one agent's trajectory window.

    An empty window yields the zero-mean unit-variance default embedding.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.size == 0:
        return GaussianEmbedding(np.zeros(LATENT_DIM), np.zeros(LATENT_DIM))
    means, logvars = encode_batch(ps, window[None, :, :])
    return GaussianEmbedding(means[0], logvars[0])


def sample_embedding(mean: ad.Tensor, logvar: ad.Tensor, noise: np.ndarray) -> ad.Tensor:
    """Reparameterized draw: mean + exp(logvar/2) * noise, noise supplied."""
    std = ad.exp(ad.mul(logvar, 0.5))
    return ad.add(mean, ad.mul(std, ad.constant(noise)))


def encoder_loss(leaves: dict[str, ad.Tensor], windows: np.ndarray,
                 noise: np.ndarray, kl_weight: float = 0.01) -> ad.Tensor:
    """Next-tuple prediction MSE plus standard-normal KL on the embedding."""
    _, length, _ = windows.shape
    hs, h_last = _run_lstm(leaves, windows)
    mean = nn.dense(leaves, "mu", h_last)
    logvar = ad.clip(nn.dense(leaves, "lv", h_last), LOGVAR_MIN, LOGVAR_MAX)
    z = sample_embedding(mean, logvar, noise)

    # KL(N(mean, var) || N(0, I)), averaged over batch and latent dims.
    var = ad.exp(logvar)
    kl_terms = ad.sub(ad.add(ad.square(mean), var), ad.add(logvar, 1.0))
    kl = ad.mul(ad.tmean(kl_terms), 0.5)

    if length < 2:
        return ad.mul(kl, kl_weight)

    errs = None
    for t in range(length - 1):
        pred = nn.dense(leaves, "dec", ad.concat([hs[t], z], axis=1))
        e = ad.tmean(ad.square(ad.sub(pred, ad.constant(windows[:, t + 1, :]))))
        errs = e if errs is None else ad.add(errs, e)
    recon = ad.mul(errs, 1.0 / (length - 1))
    return ad.add(recon, ad.mul(kl, kl_weight))


def encoder_train_step(ps: nn.ParamSet, windows: np.ndarray,
                       rng: np.random.Generator, lr: float,
                       kl_weight: float = 0.01) -> float:
    """One Adam step on the encoder loss over a batch of windows."""
    if windows.shape[1] < 1:
        return 0.0
    noise = rng.standard_normal((windows.shape[0], LATENT_DIM))
    ps.zero_grad()
    leaves = ps.tensors()
    loss = encoder_loss(leaves, windows, noise, kl_weight)
    loss.backward()
    nn.collect_grads(ps, leaves)
    nn.adam_update(ps, lr)
    return loss.item()
