"""Filling a noised window in two-channel sine waves.

Ten steps of each test sequence are overwritten with standard normal noise.
A model with bidirectional recognition reconstructs them greedily, feeding
each reconstruction back as the next input.

Run: python demos/04_imputation.py   (about 25 s)
"""

from storn import CorruptionSpec, StornModel, TrainConfig, corrupt, data, fit, impute
from storn.tasks import window_mse

raw = data.synth_sines(200, 60, seed=1)
stats = data.fit_standardization(raw)
train = data.standardize_dataset(raw, stats)
valid = data.standardize_dataset(data.synth_sines(30, 60, seed=2), stats)
test = data.standardize_dataset(data.synth_sines(50, 60, seed=3), stats)

model = StornModel.create(2, 16, 2, likelihood="gaussian", recognition="bidirectional",
                          f_h="tanh", seed=0)
model = fit(model, train, valid, TrainConfig(batch_size=16, max_epochs=50, seed=0)).model

x = test.batch()
spec = CorruptionSpec(30, 40, seed=5)
noisy = corrupt(x, spec)
filled = impute(model, noisy, spec)
print("window MSE: noise %.3f, imputed %.3f"
      % (window_mse(noisy, x, spec).mean(), window_mse(filled, x, spec).mean()))
