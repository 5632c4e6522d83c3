"""Stochastic recurrent networks.

A generating RNN receives, besides the previous observation, a per-step
latent vector through an extra input map ``W_lat``; a recognition RNN
produces a diagonal Gaussian posterior over those latents.  The prior is a
standard Normal factorising over steps and latent channels.

Time alignment: step ``t`` (0-based) of the generating net reads
``x[t-1]`` (zeros at ``t = 0``) and ``z[t]`` and its output parameterises
``p(x[t] | x[:t], z[:t+1])``.  The recognition posterior for ``z[t]`` sees
``x[:t+1]`` in ``causal`` mode, ``x[:t]`` in ``causal_exclusive`` mode and
the whole sequence in ``bidirectional`` mode.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import core, rnn
from .core import DimensionError
from .rnn import RnnParams, SequenceBatch

LIKELIHOODS = ("bernoulli", "gaussian")
RECOGNITION_MODES = ("causal", "causal_exclusive", "bidirectional")
EPS_SIGMA = 1e-6
CHECKPOINT_FORMAT = "storn-checkpoint"


@dataclass
class StornModel:
    """Generating net, latent-input map and recognition net(s).

    ``W_lat`` has shape ``latent_dim x n_hidden``; a model with
    ``latent_dim == 0`` has no recognition net and is a plain sRNN.
    """

    gen: RnnParams
    W_lat: np.ndarray
    recog: RnnParams = None
    recog_bwd: RnnParams = None
    likelihood: str = "bernoulli"
    output_std: float = 1.0
    recognition: str = "causal"
    eps_sigma: float = EPS_SIGMA

    def __post_init__(self):
        if self.likelihood not in LIKELIHOODS:
            raise ValueError("unknown likelihood %r" % self.likelihood)
        if self.recognition not in RECOGNITION_MODES:
            raise ValueError("unknown recognition mode %r" % self.recognition)
        if not self.output_std > 0:
            raise ValueError("output_std must be positive")
        if self.likelihood == "bernoulli" and self.gen.f_y not in ("logistic", "sigmoid"):
            raise ValueError("bernoulli likelihood needs a logistic output transfer")
        if core.is_traced(self.W_lat):
            return
        self.W_lat = np.asarray(self.W_lat, dtype=np.float64)
        lam = self.W_lat.shape[0]
        if self.W_lat.shape != (lam, self.gen.n_hidden):
            raise DimensionError("W_lat must be latent_dim x %d, got %s"
                                 % (self.gen.n_hidden, self.W_lat.shape))
        if self.gen.n_out != self.gen.n_in:
            raise DimensionError("generating net must map K features to K outputs")
        if lam == 0:
            return
        if self.recog is None:
            raise ValueError("a model with latents needs a recognition net")
        for part in (self.recog, self.recog_bwd):
            if part is None:
                continue
            if part.n_out != 2 * lam:
                raise DimensionError("recognition output width must be 2 * latent_dim = %d, got %d"
                                     % (2 * lam, part.n_out))
            if part.n_in != self.gen.n_in:
                raise DimensionError("recognition input width differs from the data width")
        if (self.recognition == "bidirectional") != (self.recog_bwd is not None):
            raise ValueError("recog_bwd must be given exactly for bidirectional recognition")

    @classmethod
    def create(cls, n_features, n_hidden, latent_dim, likelihood="bernoulli",
               recognition="causal", recog_hidden=None, f_h="logistic",
               recog_f_h=None, output_std=1.0, init="default", seed=0):
        """Randomly initialised model (reproducible given ``seed``)."""
        f_y = "logistic" if likelihood == "bernoulli" else "identity"
        seeds = np.random.SeedSequence(seed).generate_state(4)
        gen = rnn.init_params((n_features, n_hidden, n_features), init, seeds[0], f_h, f_y)
        if init == "zero" or latent_dim == 0:
            W_lat = np.zeros((latent_dim, n_hidden))
        else:
            W_lat = rnn.glorot_uniform(np.random.default_rng(seeds[1]), latent_dim, n_hidden)
        recog = recog_bwd = None
        if latent_dim > 0:
            dims = (n_features, recog_hidden or n_hidden, 2 * latent_dim)
            rf = recog_f_h or f_h
            recog = rnn.init_params(dims, init, seeds[2], rf, "identity")
            if recognition == "bidirectional":
                recog_bwd = rnn.init_params(dims, init, seeds[3], rf, "identity")
        return cls(gen, W_lat, recog, recog_bwd, likelihood, float(output_std), recognition)

    @property
    def latent_dim(self):
        return self.W_lat.shape[0]

    @property
    def n_features(self):
        return self.gen.n_in

    def arrays(self):
        """Flat name -> array mapping of every trainable parameter."""
        out = self.gen.arrays("gen.")
        out["gen.W_lat"] = core.value_of(self.W_lat)
        if self.recog is not None:
            out.update(self.recog.arrays("recog."))
        if self.recog_bwd is not None:
            out.update(self.recog_bwd.arrays("recog_bwd."))
        return out

    def with_arrays(self, arrays):
        return replace(
            self,
            gen=self.gen.with_arrays(arrays, "gen."),
            W_lat=arrays["gen.W_lat"],
            recog=None if self.recog is None else self.recog.with_arrays(arrays, "recog."),
            recog_bwd=None if self.recog_bwd is None else self.recog_bwd.with_arrays(arrays, "recog_bwd."),
        )

    def watch(self, tape):
        """A copy whose parameters are traced leaves on ``tape``."""
        return self.with_arrays(tape.watch_all(self.arrays()))

    def header(self):
        return {
            "format": CHECKPOINT_FORMAT,
            "latent_dim": self.latent_dim,
            "likelihood": self.likelihood,
            "output_std": self.output_std,
            "recognition": self.recognition,
            "eps_sigma": self.eps_sigma,
            "eps_prob": core.EPS_PROB,
            "gen_f_h": self.gen.f_h,
            "gen_f_y": self.gen.f_y,
            "recog_f_h": None if self.recog is None else self.recog.f_h,
            "recog_f_y": None if self.recog is None else self.recog.f_y,
        }


@dataclass
class PosteriorStats:
    """Recognition Gaussian: mean ``mu``, std ``sigma`` and variance ``var`` (T x B x L)."""

    mu: object
    sigma: object
    var: object


@dataclass
class BoundReport:
    """Per-sequence KL, reconstruction NLL and their sum, with batch totals."""

    kl: object
    recon_nll: object
    bound: object
    kl_total: object
    recon_total: object
    bound_total: object
    lengths: np.ndarray

    @property
    def batch_size(self):
        return len(self.lengths)

    def loss(self):
        """Batch mean of per-sequence bounds (the training objective)."""
        return core.mul(self.bound_total, 1.0 / self.batch_size)


def shifted_inputs(x):
    """``x[t-1]`` at every valid step ``t`` with zeros at ``t = 0`` and under the mask."""
    prev = np.zeros_like(x.values)
    prev[1:] = x.values[:-1]
    return prev * x.mask[:, :, None]


def recognition_forward(model, x):
    """Posterior statistics ``mu = y[:L]`` and ``sigma = sqrt(y[L:]**2 + eps_sigma)``."""
    lam = model.latent_dim
    if x.features != model.n_features:
        raise DimensionError("data width %d does not match model width %d"
                             % (x.features, model.n_features))
    if lam == 0:
        empty = np.zeros((x.T, x.B, 0))
        return PosteriorStats(empty, empty, empty)
    if model.recognition == "bidirectional":
        y = rnn.birnn_forward(model.recog, model.recog_bwd, x)
    elif model.recognition == "causal_exclusive":
        hidden = rnn.run_hidden(model.recog, shifted_inputs(x), x.mask)
        y = rnn.readout(model.recog, hidden, x.mask)
    else:
        _, y = rnn.rnn_forward(model.recog, x)
    mu = core.getitem(y, (Ellipsis, slice(0, lam)))
    s = core.getitem(y, (Ellipsis, slice(lam, 2 * lam)))
    var = core.add(core.square(s), model.eps_sigma)
    return PosteriorStats(mu, core.sqrt(var), var)


def sample_latents(stats, eps):
    """Reparametrised draw ``z = mu + sigma * eps``."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != core.value_of(stats.mu).shape:
        raise DimensionError("eps shape %s does not match posterior %s"
                             % (eps.shape, core.value_of(stats.mu).shape))
    return core.add(stats.mu, core.mul(stats.sigma, eps))


def generative_forward(model, x, z=None):
    """Likelihood parameters for every step (T x B x K).

    Row ``t`` parameterises ``x[t]`` given ``x[:t]`` and ``z[:t+1]``.  ``z``
    may be omitted only for latent-free models.
    """
    if x.features != model.n_features:
        raise DimensionError("data width %d does not match model width %d"
                             % (x.features, model.n_features))
    extra = ()
    if model.latent_dim > 0:
        if z is None:
            raise ValueError("latents required for a model with latent_dim > 0")
        zv = core.value_of(z)
        if zv.shape != (x.T, x.B, model.latent_dim):
            raise DimensionError("z must be %s, got %s"
                                 % ((x.T, x.B, model.latent_dim), zv.shape))
        extra = ((z, model.W_lat),)
    hidden = rnn.run_hidden(model.gen, shifted_inputs(x), x.mask, extra=extra)
    return rnn.readout(model.gen, hidden, x.mask)


def generative_step(model, x_prev, z, h):
    """One step of the generating net for ``B x K`` inputs; returns ``(h, y)``."""
    g = model.gen
    pre = x_prev @ core.value_of(g.W_in) + h @ core.value_of(g.W_rec) + core.value_of(g.b_hid)
    if model.latent_dim > 0:
        pre = pre + z @ core.value_of(model.W_lat)
    h = core.transfer(g.f_h)(pre)
    y = core.transfer(g.f_y)(h @ core.value_of(g.W_out) + core.value_of(g.b_out))
    return h, y


def likelihood_nll(model, params, x):
    """``(per_sequence, total)`` NLL of ``x`` under per-step likelihood ``params``."""
    if model.likelihood == "bernoulli":
        return core.bernoulli_nll(params, x.values, x.mask)
    return core.gaussian_nll(params, model.output_std, x.values, x.mask)


def kl_standard_normal(stats, mask):
    """Per-sequence ``KL(N(mu, sigma^2) || N(0, 1))`` summed over valid steps and channels."""
    mv = core.value_of(stats.mu)
    if mv.shape[-1] == 0:
        return np.zeros(mv.shape[1])
    term = core.sub(core.add(core.square(stats.mu), stats.var), core.log(stats.var))
    term = core.mul(core.sub(term, 1.0), 0.5)
    if not np.all(mask):
        term = core.mul(term, np.asarray(mask, dtype=np.float64)[:, :, None])
    return core.reduce_sum(core.reduce_sum(term, axis=2), axis=0)


def storn_bound(model, x, eps=None):
    """Single-sample estimate of the variational bound for fixed noise ``eps``.

    Fully differentiable when ``model`` holds traced parameters.
    """
    stats = recognition_forward(model, x)
    if model.latent_dim > 0:
        if eps is None:
            raise ValueError("eps required for a model with latent_dim > 0")
        z = sample_latents(stats, eps)
    else:
        z = None
    kl = kl_standard_normal(stats, x.mask)
    recon, recon_total = likelihood_nll(model, generative_forward(model, x, z), x)
    kl_total = core.reduce_sum(kl)
    return BoundReport(kl, recon, core.add(kl, recon), kl_total, recon_total,
                       core.add(kl_total, recon_total), x.lengths)


def srnn_nll(model, x):
    """``(per_sequence, total)`` NLL of the generating net with the latent input removed."""
    stripped = replace(model, W_lat=np.zeros((0, model.gen.n_hidden)), recog=None,
                       recog_bwd=None, recognition="causal")
    return likelihood_nll(stripped, generative_forward(stripped, x), x)


def save_model(path, model, extra=None):
    header = model.header()
    header.update(extra or {})
    rnn.save_arrays(path, model.arrays(), header)


def load_model(path):
    """Returns ``(model, header)``."""
    arrays, header = rnn.load_arrays(path)
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("%s is not a model checkpoint" % path)
    gen = RnnParams.from_arrays(arrays, "gen.", header["gen_f_h"], header["gen_f_y"])
    recog = recog_bwd = None
    if "recog.W_in" in arrays:
        recog = RnnParams.from_arrays(arrays, "recog.", header["recog_f_h"], header["recog_f_y"])
    if "recog_bwd.W_in" in arrays:
        recog_bwd = RnnParams.from_arrays(arrays, "recog_bwd.", header["recog_f_h"], header["recog_f_y"])
    model = StornModel(gen, arrays["gen.W_lat"], recog, recog_bwd, header["likelihood"],
                       header["output_std"], header["recognition"], header["eps_sigma"])
    return model, header
