"""Imputation, prefix-conditioned generation and squared-error evaluation."""

from dataclasses import dataclass

import numpy as np

from . import core
from .core import DimensionError
from .model import generative_forward, generative_step, recognition_forward
from .rnn import SequenceBatch


@dataclass
class CorruptionSpec:
    """Steps ``start <= t < end`` (0-based) of ``channels`` (all if None) get noise."""

    start: int
    end: int
    channels: list = None
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.start <= self.end:
            raise ValueError("need 0 <= start <= end, got %d, %d" % (self.start, self.end))

    def channel_index(self, n_features):
        if self.channels is None:
            return np.arange(n_features)
        idx = np.asarray(self.channels, dtype=int)
        if np.any((idx < 0) | (idx >= n_features)):
            raise ValueError("corruption channels outside [0, %d)" % n_features)
        return idx

    def check(self, x):
        if self.end > x.lengths.min():
            raise ValueError("window [%d, %d) exceeds the shortest sequence (%d steps)"
                             % (self.start, self.end, x.lengths.min()))


def corrupt(x, spec, kind="real"):
    """Overwrite the window with standard-normal noise (fair coin flips if binary)."""
    spec.check(x)
    ch = spec.channel_index(x.features)
    rng = np.random.default_rng(spec.seed)
    values = x.values.copy()
    shape = (spec.end - spec.start, x.B, len(ch))
    if kind == "binary":
        noise = (rng.random(shape) < 0.5).astype(np.float64)
    else:
        noise = rng.standard_normal(shape)
    values[spec.start:spec.end, :, ch] = noise
    return SequenceBatch(values, x.mask)


def _point_value(model, y):
    if model.likelihood == "bernoulli":
        return (y >= 0.5).astype(np.float64)
    return y


def impute(model, x_corrupted, spec):
    """Fill the corruption window from the posterior mode of the latents.

    The latents are fixed at the recognition mean computed on the corrupted
    input.  Inside the window each step takes the mode of the model's output
    (the mean for Gaussian data, 0.5-thresholded probabilities for binary
    data), and that reconstruction is fed to the next step instead of the
    noise.  Everything outside the window is returned unchanged.
    """
    spec.check(x_corrupted)
    out = x_corrupted.values.copy()
    if spec.start == spec.end:
        return SequenceBatch(out, x_corrupted.mask)
    ch = spec.channel_index(x_corrupted.features)
    z_hat = core.value_of(recognition_forward(model, x_corrupted).mu)
    B = x_corrupted.B
    h = np.zeros((B, model.gen.n_hidden))
    x_prev = np.zeros((B, model.n_features))
    for t in range(spec.end):
        h, y = generative_step(model, x_prev, z_hat[t], h)
        if t >= spec.start:
            out[t][:, ch] = _point_value(model, y)[:, ch]
        x_prev = out[t]
    return SequenceBatch(out, x_corrupted.mask)


def generate(model, prefix, horizon, seed=0):
    """Continue every prefix sequence by ``horizon`` free-running steps.

    Latents come from the prior throughout.  Past the prefix each step's
    output mean (probabilities for binary data) becomes the next input.  The
    prefix is copied verbatim into the result.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    if not prefix.mask.all():
        raise ValueError("prefixes must share one length")
    P, B, K = prefix.values.shape
    total = P + horizon
    out = np.zeros((total, B, K))
    out[:P] = prefix.values
    if horizon == 0:
        return SequenceBatch(out, np.ones((total, B)))
    z = np.random.default_rng(seed).standard_normal((total, B, model.latent_dim))
    h = np.zeros((B, model.gen.n_hidden))
    x_prev = np.zeros((B, K))
    for t in range(total):
        h, y = generative_step(model, x_prev, z[t], h)
        if t >= P:
            out[t] = y
        x_prev = out[t]
    return SequenceBatch(out, np.ones((total, B)))


def _check_pair(pred, target):
    if pred.values.shape != target.values.shape:
        raise DimensionError("shape mismatch: %s vs %s" % (pred.values.shape, target.values.shape))


def mse(pred, target):
    """Mean squared difference over all entries valid in both batches."""
    _check_pair(pred, target)
    m = (pred.mask * target.mask)[:, :, None]
    n = m.sum() * pred.features
    if n == 0:
        return 0.0
    return float(np.sum(m * (pred.values - target.values) ** 2) / n)


def window_mse(pred, target, spec):
    """Per-sequence mean squared error over the corruption window (0 if empty)."""
    _check_pair(pred, target)
    if spec.start == spec.end:
        return np.zeros(pred.B)
    ch = spec.channel_index(pred.features)
    d = pred.values[spec.start:spec.end][:, :, ch] - target.values[spec.start:spec.end][:, :, ch]
    return np.mean(d ** 2, axis=(0, 2))


def one_step_mse(model, x, mode="map_latent"):
    """MSE of teacher-forced one-step-ahead means.

    ``map_latent`` sets the latents to the recognition mean, ``prior_mean``
    to zero.
    """
    if model.likelihood != "gaussian":
        raise ValueError("one_step_mse needs a gaussian likelihood model")
    if mode == "map_latent":
        z = core.value_of(recognition_forward(model, x).mu)
    elif mode == "prior_mean":
        z = np.zeros((x.T, x.B, model.latent_dim))
    else:
        raise ValueError("mode must be 'map_latent' or 'prior_mean'")
    means = generative_forward(model, x, z if model.latent_dim else None)
    return mse(SequenceBatch(means, x.mask), x)
