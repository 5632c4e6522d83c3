"""Stochastic recurrent networks trained by stochastic gradient variational Bayes."""

from .core import Tape, Tensor, backward, finite_difference_grad
from .data import Dataset, load_event_sequences, load_real_sequences, make_batches
from .estimator import NllEstimate, bound_estimate, evaluate, importance_nll, std_search
from .model import (BoundReport, PosteriorStats, StornModel, generative_forward,
                    kl_standard_normal, load_model, recognition_forward, sample_latents,
                    save_model, srnn_nll, storn_bound)
from .optimizer import AdadeltaState, TrainConfig, adadelta_step, clip_gradients, fit
from .rnn import RnnParams, SequenceBatch, birnn_forward, init_params, rnn_forward
from .tasks import CorruptionSpec, corrupt, generate, impute, mse, one_step_mse

__version__ = "0.1.0"
