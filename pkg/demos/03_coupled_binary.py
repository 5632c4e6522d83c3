"""Latent variables capture dependence between simultaneous outputs.

Every channel of the coupled dataset copies one fair coin per step.  A model
whose outputs are independent given the past cannot do better than
channels * log 2 per step; with a latent variable the floor drops to log 2.

Run: python demos/03_coupled_binary.py   (about 10 s)
"""

from storn import StornModel, TrainConfig, data, fit
from storn.estimator import importance_nll

train = data.synth_coupled_binary(300, 20, channels=4, seed=1)
valid = data.synth_coupled_binary(50, 20, channels=4, seed=2)
test = data.synth_coupled_binary(50, 20, channels=4, seed=3)
print("floors: true %.3f, factorized %.3f nats/step"
      % (test.oracle["true_nll_per_step"], test.oracle["factorized_nll_per_step"]))

cfg = TrainConfig(batch_size=16, max_epochs=60, patience=10, seed=0)
for name, latent in (("STORN, 2 latents", 2), ("sRNN", 0)):
    model = StornModel.create(4, 16, latent, f_h="logistic", seed=0)
    result = fit(model, train, valid, cfg)
    nll = importance_nll(result.model, test.batch(), 200, seed=0)
    print("%-17s best epoch %2d, test %.3f nats/step" % (name, result.best_epoch, nll.mean_per_step))
