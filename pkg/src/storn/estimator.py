"""Importance-sampling estimates of the marginal negative log-likelihood.

The recognition model is the proposal.  For draws ``z_s ~ q(z | x)``

    log w_s = log p(x | z_s) + log p(z_s) - log q(z_s | x)
    NLL    ~= -(logsumexp(log w) - log S)

Noise for sequence ``i`` of a batch comes from stream ``i`` of the seed (see
:func:`storn.seeding.stream`), so estimates do not depend on how sequences
are grouped into batches.
"""

import csv
from dataclasses import dataclass, replace

import numpy as np

from . import core
from .core import LOG_2PI
from .model import generative_forward, kl_standard_normal, likelihood_nll, recognition_forward
from .rnn import SequenceBatch
from .seeding import stream

# Upper bound on floats held by one chunk of tiled samples.
CHUNK_FLOATS = 4_000_000


@dataclass
class NllEstimate:
    """Per-sequence importance estimates (nats) with weight diagnostics."""

    value: np.ndarray
    stderr: np.ndarray
    ess: np.ndarray
    log_weight_std: np.ndarray
    lengths: np.ndarray
    num_samples: int
    # nonzero observation entries per sequence (active notes for binary data)
    events: np.ndarray = None

    @property
    def total(self):
        return float(self.value.sum())

    @property
    def per_step(self):
        return self.value / self.lengths

    @property
    def mean_per_step(self):
        return self.total / float(self.lengths.sum())

    @property
    def per_event(self):
        """NLL per nonzero entry; a sequence with no events divides by one."""
        return self.value / np.maximum(self.events, 1)


@dataclass
class BoundEstimate:
    """Per-sequence Monte Carlo mean of the single-sample bound."""

    value: np.ndarray
    stderr: np.ndarray
    kl: np.ndarray
    lengths: np.ndarray
    num_samples: int

    @property
    def per_step(self):
        return self.value / self.lengths


def _sample_terms(model, seq, eps):
    """Reconstruction NLL, log prior and log proposal density of each draw.

    ``seq`` is one ``L x K`` sequence and ``eps`` an ``S x L x latent`` block.
    Returns ``(recon, log_prior, log_q, kl)``.
    """
    L, K = seq.shape
    single = SequenceBatch(seq[:, None, :], np.ones((L, 1)))
    stats = recognition_forward(model, single)
    kl = float(kl_standard_normal(stats, single.mask)[0])
    S = eps.shape[0]
    if model.latent_dim == 0:
        recon, _ = likelihood_nll(model, generative_forward(model, single), single)
        zeros = np.zeros(S)
        return np.full(S, recon[0]), zeros, zeros, kl
    mu, sigma = stats.mu, stats.sigma
    width = max(model.gen.n_hidden, K, 1)
    chunk = max(1, CHUNK_FLOATS // (L * width))
    recon = np.empty(S)
    for lo in range(0, S, chunk):
        e = eps[lo:lo + chunk].transpose(1, 0, 2)
        n = e.shape[1]
        z = mu + sigma * e
        tiled = SequenceBatch(np.repeat(seq[:, None, :], n, axis=1), np.ones((L, n)))
        recon[lo:lo + n], _ = likelihood_nll(model, generative_forward(model, tiled, z), tiled)
    z_all = mu[None, :, 0, :] + sigma[None, :, 0, :] * eps
    log_prior = np.sum(-0.5 * z_all ** 2 - 0.5 * LOG_2PI, axis=(1, 2))
    log_q = np.sum(-0.5 * eps ** 2 - np.log(sigma[None, :, 0, :]) - 0.5 * LOG_2PI, axis=(1, 2))
    return recon, log_prior, log_q, kl


def _draw(model, seed, index, num_samples, length):
    rng = stream(seed, index)
    return rng.standard_normal((num_samples, length, model.latent_dim))


def _importance_stats(log_w):
    S = log_w.size
    lse = core.logsumexp(log_w)
    value = -(lse - np.log(S))
    ess = float(np.exp(2.0 * lse - core.logsumexp(2.0 * log_w)))
    if S > 1:
        w = np.exp(log_w - log_w.max())
        stderr = float(np.std(w, ddof=1) / (np.sqrt(S) * np.mean(w)))
        spread = float(np.std(log_w))
    else:
        stderr, spread = float("nan"), 0.0
    return value, stderr, ess, spread


def evaluate(model, x, num_samples=100, seed=0):
    """Importance estimate and sampled bound from the same draws.

    Returns ``(NllEstimate, BoundEstimate)``.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    seqs = x.sequences()
    B = len(seqs)
    nll = np.empty(B)
    nll_se = np.empty(B)
    ess = np.empty(B)
    spread = np.empty(B)
    bound = np.empty(B)
    bound_se = np.empty(B)
    kls = np.empty(B)
    for i, seq in enumerate(seqs):
        eps = _draw(model, seed, i, num_samples, seq.shape[0])
        recon, log_prior, log_q, kl = _sample_terms(model, seq, eps)
        if model.latent_dim == 0:
            # no latents: both estimators are the exact likelihood
            nll[i] = bound[i] = recon[0]
            nll_se[i] = bound_se[i] = spread[i] = kls[i] = 0.0
            ess[i] = num_samples
            continue
        nll[i], nll_se[i], ess[i], spread[i] = _importance_stats(-recon + log_prior - log_q)
        b = kl + recon
        bound[i] = b.mean()
        bound_se[i] = b.std(ddof=1) / np.sqrt(num_samples) if num_samples > 1 else float("nan")
        kls[i] = kl
    lengths = x.lengths
    events = np.array([np.count_nonzero(s) for s in seqs])
    return (NllEstimate(nll, nll_se, ess, spread, lengths, num_samples, events),
            BoundEstimate(bound, bound_se, kls, lengths, num_samples))


def importance_nll(model, x, num_samples=100, seed=0):
    """Per-sequence importance-sampling NLL estimate, deterministic given ``seed``."""
    return evaluate(model, x, num_samples, seed)[0]


def bound_estimate(model, x, num_samples=100, seed=0):
    """Per-sequence mean of ``num_samples`` single-sample bounds."""
    return evaluate(model, x, num_samples, seed)[1]


def std_search(model, data, lo, hi, iters=30, num_samples=100, seed=0):
    """Golden-section search over ``log(output_std)`` minimising the mean importance NLL.

    Every probe reuses the same noise (fixed ``seed``).  Returns
    ``(best_std, best_nll)``; the endpoints are probed too, so the result is
    never worse than either of them.
    """
    if model.likelihood != "gaussian":
        raise ValueError("std_search needs a gaussian likelihood model")
    if not 0 < lo < hi:
        raise ValueError("need 0 < lo < hi, got lo=%r hi=%r" % (lo, hi))

    def objective(log_std):
        m = replace(model, output_std=float(np.exp(log_std)))
        return float(importance_nll(m, data, num_samples, seed).value.mean())

    a, b = np.log(lo), np.log(hi)
    if iters == 0:
        mid = 0.5 * (a + b)
        return float(np.exp(mid)), objective(mid)
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    probes = {a: objective(a), b: objective(b)}
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = objective(c), objective(d)
    probes[c], probes[d] = fc, fd
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = objective(c)
            probes[c] = fc
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = objective(d)
            probes[d] = fd
    best = min(probes, key=probes.get)
    return float(np.exp(best)), probes[best]


REPORT_COLUMNS = ("seq_id", "length", "bound", "bound_stderr", "bound_per_step", "kl",
                  "is_nll", "is_stderr", "is_nll_per_step", "ess", "log_weight_std",
                  "events", "is_nll_per_event")


def report_rows(ids, nll, bound):
    """Per-sequence rows followed by an ``ALL`` aggregate row.

    The aggregate holds per-sequence means and their standard errors; the
    per-step and per-event columns are ``sum / total count``.
    """
    rows = []
    for i, sid in enumerate(ids):
        rows.append((sid, int(nll.lengths[i]), bound.value[i], bound.stderr[i],
                     bound.per_step[i], bound.kl[i], nll.value[i], nll.stderr[i], nll.per_step[i],
                     nll.ess[i], nll.log_weight_std[i], int(nll.events[i]), nll.per_event[i]))
    n = len(ids)
    steps = float(nll.lengths.sum())
    events = int(nll.events.sum())
    rows.append(("ALL", int(steps), bound.value.mean(), np.sqrt(np.sum(bound.stderr ** 2)) / n,
                 bound.value.sum() / steps, bound.kl.mean(), nll.value.mean(), np.sqrt(np.sum(nll.stderr ** 2)) / n,
                 nll.value.sum() / steps, nll.ess.mean(), nll.log_weight_std.mean(),
                 events, nll.value.sum() / max(events, 1)))
    return rows


def write_report(path, ids, nll, bound):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for row in report_rows(ids, nll, bound):
            w.writerow([row[0], row[1]] + [repr(float(v)) for v in row[2:11]]
                       + [row[11], repr(float(row[12]))])
