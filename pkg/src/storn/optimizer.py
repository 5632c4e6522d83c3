"""Training: Adadelta with Nesterov momentum, gradient clipping, early stopping."""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import core, data
from .core import NonFiniteError, Tape
from .model import storn_bound
from .rnn import SequenceBatch
from .seeding import derive_seed, stream

log = logging.getLogger(__name__)


class TrainingDiverged(NonFiniteError):
    """Raised when the loss or a gradient stops being finite."""


@dataclass
class AdadeltaState:
    """Decayed means of squared gradients and squared steps, plus velocity."""

    sq_grad: dict
    sq_step: dict
    velocity: dict
    rho: float = 0.95
    eps: float = 1e-6
    momentum: float = 0.9

    @classmethod
    def zeros(cls, params, rho=0.95, eps=1e-6, momentum=0.9):
        z = {k: np.zeros_like(v) for k, v in params.items()}
        return cls(dict(z), dict(z), dict(z), rho, eps, momentum)

    def lookahead(self, params):
        """The point ``theta + momentum * v`` at which gradients are taken."""
        if self.momentum == 0:
            return dict(params)
        return {k: v + self.momentum * self.velocity[k] for k, v in params.items()}


def adadelta_step(params, grads, state):
    """One update; ``grads`` must be evaluated at ``state.lookahead(params)``.

    Returns ``(new_params, new_state)``; inputs are left untouched.
    """
    rho, eps, m = state.rho, state.eps, state.momentum
    new_params, sq_grad, sq_step, velocity = {}, {}, {}, {}
    for k, theta in params.items():
        g = grads[k]
        if g.shape != theta.shape or state.sq_grad[k].shape != theta.shape:
            raise ValueError("shape mismatch for %s: param %s, grad %s"
                             % (k, theta.shape, g.shape))
        sq_grad[k] = rho * state.sq_grad[k] + (1.0 - rho) * g * g
        step = -(np.sqrt(state.sq_step[k] + eps) / np.sqrt(sq_grad[k] + eps)) * g
        sq_step[k] = rho * state.sq_step[k] + (1.0 - rho) * step * step
        velocity[k] = m * state.velocity[k] + step
        new_params[k] = theta + velocity[k]
    return new_params, AdadeltaState(sq_grad, sq_step, velocity, rho, eps, m)


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads, threshold):
    """Rescale all gradients jointly so their global L2 norm is at most ``threshold``."""
    if threshold <= 0:
        raise ValueError("clip threshold must be positive")
    norm = global_norm(grads)
    if norm <= threshold:
        return dict(grads)
    scale = threshold / norm
    return {k: g * scale for k, g in grads.items()}


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 20
    clip: float = 10.0
    seed: int = 0
    rho: float = 0.95
    eps: float = 1e-6
    momentum: float = 0.9

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ValueError("batch_size and patience must be >= 1, max_epochs >= 0")
        if not (self.clip > 0 and 0 < self.rho < 1 and self.eps > 0 and 0 <= self.momentum < 1):
            raise ValueError("invalid optimizer hyperparameters")


@dataclass
class EpochRecord:
    epoch: int
    train_bound: float
    val_bound: float
    kl_term: float
    recon_term: float
    seconds: float

    @property
    def kl_share(self):
        return self.kl_term / self.val_bound if self.val_bound else 0.0


@dataclass
class FitResult:
    model: object
    log: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_bound: float = float("inf")


def loss_and_grads(model, batch, eps):
    """Batch-mean bound and its gradient for every parameter of ``model``."""
    tape = Tape()
    report = storn_bound(model.watch(tape), batch, eps)
    loss = report.loss()
    grads = backward_checked(tape, loss)
    return float(core.value_of(loss)), grads, report


def backward_checked(tape, loss):
    grads = core.backward(tape, loss)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged("non-finite gradient for %s" % name)
    return grads


def validation_bound(model, sequences, seed, batch_size=64):
    """Mean per-sequence bound, KL and reconstruction NLL under fixed noise.

    Sequence ``i`` always uses stream ``i`` of ``seed``.
    """
    kl = recon = 0.0
    for lo in range(0, len(sequences), batch_size):
        chunk = sequences[lo:lo + batch_size]
        batch = SequenceBatch.from_sequences(chunk)
        eps = np.zeros((batch.T, batch.B, model.latent_dim))
        for j, s in enumerate(chunk):
            eps[:len(s), j] = stream(seed, lo + j).standard_normal((len(s), model.latent_dim))
        rep = storn_bound(model, batch, eps)
        kl += float(np.sum(rep.kl))
        recon += float(np.sum(rep.recon_nll))
    n = len(sequences)
    return (kl + recon) / n, kl / n, recon / n


def fit(model, train, valid=None, config=None, on_epoch=None):
    """Optimise the bound jointly over recognition and generating parameters.

    ``train``/``valid`` are datasets or lists of ``T_i x K`` arrays.  Without
    validation data the training sequences are used for model selection.
    Returns a :class:`FitResult` holding the best-on-validation model.
    """
    config = config or TrainConfig()
    train_seqs = data.as_sequences(train)
    valid_seqs = data.as_sequences(valid) if valid is not None else train_seqs
    if not train_seqs or not valid_seqs:
        raise ValueError("training and validation data must be non-empty")
    shuffle_seed = derive_seed(config.seed, "shuffle")
    noise = np.random.default_rng(derive_seed(config.seed, "eps"))
    valid_seed = derive_seed(config.seed, "valid")

    params = model.arrays()
    state = AdadeltaState.zeros(params, config.rho, config.eps, config.momentum)
    result = FitResult(model)
    if config.max_epochs == 0:
        return result
    best_params = params
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        start = time.perf_counter()
        total, count = 0.0, 0
        for b, batch in enumerate(data.make_batches(train_seqs, config.batch_size,
                                                    derive_seed(shuffle_seed, str(epoch)))):
            eps = noise.standard_normal((batch.T, batch.B, model.latent_dim))
            try:
                loss, grads, _ = loss_and_grads(model.with_arrays(state.lookahead(params)), batch, eps)
            except NonFiniteError as err:
                raise TrainingDiverged("epoch %d batch %d: %s" % (epoch, b, err)) from err
            grads = clip_gradients(grads, config.clip)
            params, state = adadelta_step(params, grads, state)
            total += loss * batch.B
            count += batch.B
        current = model.with_arrays(params)
        try:
            val, kl, recon = validation_bound(current, valid_seqs, valid_seed)
        except NonFiniteError as err:
            raise TrainingDiverged("epoch %d validation: %s" % (epoch, err)) from err
        rec = EpochRecord(epoch, total / count, val, kl, recon, time.perf_counter() - start)
        result.log.append(rec)
        log.info("epoch %d train %.4f valid %.4f (kl %.4f)", epoch, rec.train_bound, val, kl)
        if on_epoch is not None:
            on_epoch(rec)
        if val < result.best_val_bound:
            result.best_val_bound, result.best_epoch = val, epoch
            best_params = params
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    result.model = model.with_arrays(best_params)
    return result


LOG_COLUMNS = ("epoch", "train_bound", "val_bound", "kl_term", "recon_term")


def write_log(path, records, timing_path=None):
    """Training log as CSV; wall-clock seconds go to ``timing_path`` if given.

    Keeping timings out of the main log makes it reproducible byte for byte.
    """
    with open(path, "w") as fh:
        fh.write(",".join(LOG_COLUMNS) + "\n")
        for r in records:
            fh.write("%d,%r,%r,%r,%r\n" % (r.epoch, r.train_bound, r.val_bound,
                                            r.kl_term, r.recon_term))
    if timing_path is not None:
        with open(timing_path, "w") as fh:
            fh.write("epoch,seconds\n")
            for r in records:
                fh.write("%d,%.6f\n" % (r.epoch, r.seconds))
