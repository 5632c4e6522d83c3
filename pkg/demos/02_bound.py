"""The variational bound, its KL term, and importance-sampled likelihood.

A small random model is scored on coupled binary sequences.  The single-sample
bound sits above the importance estimate, and the gap narrows as the number of
proposals grows.

Run: python demos/02_bound.py
"""

from storn import StornModel, data
from storn.estimator import bound_estimate, importance_nll

ds = data.synth_coupled_binary(20, 15, channels=4, seed=0)
x = ds.batch()
model = StornModel.create(4, 8, 2, seed=3)

b = bound_estimate(model, x, 200, seed=1)
print("bound            %.3f nats/step (KL share %.3f)"
      % (b.value.sum() / x.lengths.sum(), b.kl.sum() / b.value.sum()))
for S in (1, 10, 100, 1000):
    est = importance_nll(model, x, S, seed=2)
    print("IS estimate S=%-4d %.3f nats/step, mean ESS %.1f" % (S, est.mean_per_step, est.ess.mean()))
