"""Shared test utilities."""

import numpy as np

from storn import StornModel
from storn.rnn import SequenceBatch

GRAD_RTOL = 1e-5
GRAD_ATOL = 1e-8


def grad_errors(analytic, numeric):
    """Largest elementwise relative error, ignoring entries within the absolute floor."""
    worst = 0.0
    for name in analytic:
        a, n = analytic[name], numeric[name]
        diff = np.abs(a - n)
        rel = diff / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-300)
        rel = np.where(diff <= GRAD_ATOL, 0.0, rel)
        if rel.size:
            worst = max(worst, float(rel.max()))
    return worst


def assert_grads_close(analytic, numeric):
    assert set(analytic) == set(numeric)
    err = grad_errors(analytic, numeric)
    assert err < GRAD_RTOL, "max relative gradient error %.3g" % err


def random_batch(rng, T, B, K, binary=True, ragged=True):
    seqs = []
    for b in range(B):
        n = T if (b == 0 or not ragged) else int(rng.integers(1, T + 1))
        if binary:
            seqs.append((rng.random((n, K)) < 0.5).astype(float))
        else:
            seqs.append(rng.uniform(-2, 2, (n, K)))
    return SequenceBatch.from_sequences(seqs, length=T)


def random_model(rng, K, H, L, likelihood="bernoulli", recognition="causal",
                 f_h="tanh", scale=1.0):
    """Model with all weights and biases drawn uniformly in ``+-scale``."""
    m = StornModel.create(K, H, L, likelihood=likelihood, recognition=recognition,
                          f_h=f_h, seed=int(rng.integers(2 ** 31)))
    arrays = {k: rng.uniform(-scale, scale, v.shape) for k, v in m.arrays().items()}
    return m.with_arrays(arrays)


def linear_model(rng, K=1, H=2, L=1, output_std=0.8, recog_std=1.5):
    """Linear-Gaussian model with a broad recognition net (good proposal)."""
    m = StornModel.create(K, H, L, likelihood="gaussian", f_h="identity",
                          recog_f_h="tanh", output_std=output_std,
                          seed=int(rng.integers(2 ** 31)))
    a = {k: v.copy() for k, v in m.arrays().items()}
    g = m.gen
    a["gen.W_in"] = rng.uniform(-0.8, 0.8, g.W_in.shape)
    a["gen.W_rec"] = rng.uniform(-0.5, 0.5, g.W_rec.shape)
    a["gen.W_out"] = rng.uniform(-1.0, 1.0, g.W_out.shape)
    a["gen.b_hid"] = rng.uniform(-0.5, 0.5, g.b_hid.shape)
    a["gen.b_out"] = rng.uniform(-0.5, 0.5, g.b_out.shape)
    a["gen.W_lat"] = rng.uniform(-1.0, 1.0, m.W_lat.shape)
    a["recog.W_in"] = 0.1 * a["recog.W_in"]
    a["recog.W_out"] = 0.1 * a["recog.W_out"]
    a["recog.b_out"] = np.concatenate([np.zeros(L), np.full(L, recog_std)])
    return m.with_arrays(a)
