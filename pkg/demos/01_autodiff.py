"""Reverse-mode gradients on a small tape, checked against central differences.

Run: python demos/01_autodiff.py
"""

import numpy as np

from storn import Tape, backward, finite_difference_grad
from storn import core

rng = np.random.default_rng(0)
params = {"W": rng.standard_normal((3, 2)), "b": rng.standard_normal(2)}
x = rng.standard_normal((5, 3))


def loss(p):
    h = core.tanh(core.add(core.matmul(x, p["W"]), p["b"]))
    return core.reduce_sum(core.square(h))


tape = Tape()
watched = tape.watch_all(params)
grads = backward(tape, loss(watched))
numeric = finite_difference_grad(lambda p: float(core.value_of(loss(p))), params)

for name in params:
    err = np.max(np.abs(grads[name] - numeric[name]))
    print("%-2s analytic vs numeric, max abs difference %.2e" % (name, err))
