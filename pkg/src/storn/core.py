"""Dense double-precision arithmetic with a tape-based reverse mode.

Every operation here accepts plain numpy arrays or traced :class:`Tensor`
values.  When no argument is traced the result is a plain ``ndarray`` and
nothing is recorded, so the same model code serves both training (traced) and
evaluation (untraced, fast).

A typical gradient computation::

    tape = Tape()
    w = tape.watch(np.array([1.0, -2.0]), "w")
    loss = reduce_sum(square(w))
    grads = backward(tape, loss)      # {"w": array([ 2., -4.])}
"""

import numpy as np

EPS_PROB = 1e-7
LOG_2PI = float(np.log(2.0 * np.pi))


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or infinite values."""


class TapeError(RuntimeError):
    """Raised on misuse of a :class:`Tape` (reuse, mixing tapes)."""


class Tensor(object):
    """A value recorded on a tape.

    Only the tape that created a tensor can differentiate through it.  The
    wrapped array must not be mutated.
    """

    __slots__ = ("value", "tape", "index")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, value, tape, index):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def __repr__(self):
        return "Tensor(shape=%s, index=%d)" % (self.shape, self.index)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return reduce_sum(self, axis)


class Tape(object):
    """Records primitive operations in execution order.

    A tape supports exactly one call to :func:`backward`; build a new tape
    (and re-run the forward pass) for every gradient evaluation.
    """

    def __init__(self):
        self._ops = []
        self._count = 0
        self._watched = {}
        self.consumed = False

    def __len__(self):
        return len(self._ops)

    def watch(self, value, name):
        """Register ``value`` as a trainable leaf called ``name``."""
        if self.consumed:
            raise TapeError("tape already used for a backward pass")
        if name in self._watched:
            raise TapeError("duplicate watched name %r" % name)
        arr = np.array(value, dtype=np.float64)
        _check_finite("watch(%s)" % name, arr)
        t = Tensor(arr, self, self._next())
        self._watched[name] = t
        return t

    def watch_all(self, arrays):
        return {k: self.watch(v, k) for k, v in arrays.items()}

    @property
    def watched(self):
        return dict(self._watched)

    def _next(self):
        self._count += 1
        return self._count - 1

    def record(self, value, args, vjp):
        if self.consumed:
            raise TapeError("tape already used for a backward pass")
        out = Tensor(value, self, self._next())
        parents = tuple(a.index if isinstance(a, Tensor) else None for a in args)
        self._ops.append((out.index, parents, vjp))
        return out


def backward(tape, loss):
    """Reverse-mode adjoints of a scalar ``loss`` for every watched leaf.

    Returns a dict mapping watched names to gradient arrays.  Leaves not
    reachable from the loss get exact zeros.  A tape can be consumed once.
    """
    if tape.consumed:
        raise TapeError("backward already called on this tape; re-run forward")
    if isinstance(loss, Tensor):
        if loss.tape is not tape:
            raise TapeError("loss was recorded on a different tape")
        if loss.value.size != 1:
            raise ValueError("loss must be scalar, got shape %s" % (loss.shape,))
    elif np.size(loss) != 1:
        raise ValueError("loss must be scalar, got shape %s" % (np.shape(loss),))
    tape.consumed = True

    adjoints = {}
    if isinstance(loss, Tensor):
        adjoints[loss.index] = np.ones_like(loss.value)
    for out_index, parents, vjp in reversed(tape._ops):
        g = adjoints.pop(out_index, None)
        if g is None:
            continue
        grads = vjp(g)
        for idx, gi in zip(parents, grads):
            if idx is None or gi is None:
                continue
            if idx in adjoints:
                adjoints[idx] = adjoints[idx] + gi
            else:
                adjoints[idx] = gi
    return {
        name: np.array(adjoints.get(t.index, np.zeros_like(t.value)), dtype=np.float64)
        for name, t in tape._watched.items()
    }


def finite_difference_grad(f, params, step=1e-5):
    """Central-difference gradient of scalar ``f``.

    ``params`` is either a dict of arrays (``f`` receives a dict) or a single
    array/float (``f`` receives an array).  The input is never mutated.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if not isinstance(params, dict):
        arr = np.array(params, dtype=np.float64)
        g = finite_difference_grad(lambda d: f(d["x"]), {"x": arr}, step)
        return g["x"]
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    grads = {}
    for name, arr in base.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f(base))
            flat[i] = orig - step
            fm = float(f(base))
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * step)
        grads[name] = g
    return grads


def value_of(x):
    """The underlying array of a tensor or array-like."""
    if isinstance(x, Tensor):
        return x.value
    return np.asarray(x, dtype=np.float64)


def is_traced(*xs):
    return any(isinstance(x, Tensor) for x in xs)


def _tape_of(args):
    tape = None
    for a in args:
        if isinstance(a, Tensor):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise TapeError("operands recorded on different tapes")
    return tape


def _check_finite(op, out):
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("non-finite values produced by %s (shape %s)" % (op, np.shape(out)))


def _emit(op, out, args, vjp):
    _check_finite(op, out)
    tape = _tape_of(args)
    if tape is None:
        return out
    return tape.record(out, args, vjp)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- arithmetic ---------------------------------------------------------------

def add(a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv
    return _emit("add", out, (a, b),
                 lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    out = av - bv
    return _emit("sub", out, (a, b),
                 lambda g: (_unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av * bv
    return _emit("mul", out, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b):
    av, bv = value_of(a), value_of(b)
    out = av / bv
    return _emit("div", out, (a, b),
                 lambda g: (_unbroadcast(g / bv, av.shape),
                            _unbroadcast(-g * out / bv, bv.shape)))


def neg(a):
    return _emit("neg", -value_of(a), (a,), lambda g: (-g,))


def matmul(a, b):
    """Matrix product; ``a`` may carry leading batch axes, ``b`` is 2-D."""
    av, bv = value_of(a), value_of(b)
    if av.ndim < 2 or bv.ndim != 2 or av.shape[-1] != bv.shape[0]:
        raise DimensionError("matmul shape mismatch: %s x %s" % (av.shape, bv.shape))
    with np.errstate(over="ignore", invalid="ignore"):
        out = av @ bv

    def vjp(g):
        ga = g @ bv.T if isinstance(a, Tensor) else None
        gb = None
        if isinstance(b, Tensor):
            gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _emit("matmul", out, (a, b), vjp)


def reduce_sum(a, axis=None):
    av = value_of(a)
    out = np.asarray(av.sum(axis=axis))

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, av.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), av.shape).copy(),)

    return _emit("sum", out, (a,), vjp)


def getitem(a, idx):
    av = value_of(a)
    out = np.array(av[idx])
    fancy = isinstance(idx, tuple) and any(isinstance(i, np.ndarray) for i in idx)

    def vjp(g):
        z = np.zeros_like(av)
        if fancy:
            np.add.at(z, idx, g)
        else:
            z[idx] = g
        return (z,)

    return _emit("getitem", out, (a,), vjp)


def stack(xs, axis=0):
    vals = [value_of(x) for x in xs]
    out = np.stack(vals, axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(vals)))

    return _emit("stack", out, tuple(xs), vjp)


def concatenate(xs, axis=-1):
    vals = [value_of(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit("concatenate", out, tuple(xs), vjp)


def reshape(a, shape):
    av = value_of(a)
    return _emit("reshape", av.reshape(shape), (a,), lambda g: (g.reshape(av.shape),))


# -- elementwise functions ----------------------------------------------------

def sigmoid(x):
    """Logistic function, evaluated via ``exp(-|x|)`` so it never overflows."""
    xv = value_of(x)
    e = np.exp(-np.abs(xv))
    out = np.where(xv >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _emit("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x):
    out = np.tanh(value_of(x))
    return _emit("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def identity(x):
    return x


def exp(x):
    out = np.exp(value_of(x))
    return _emit("exp", out, (x,), lambda g: (g * out,))


def log(x):
    xv = value_of(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(xv)
    return _emit("log", out, (x,), lambda g: (g / xv,))


def sqrt(x):
    with np.errstate(invalid="ignore"):
        out = np.sqrt(value_of(x))
    return _emit("sqrt", out, (x,), lambda g: (0.5 * g / out,))


def square(x):
    xv = value_of(x)
    return _emit("square", xv * xv, (x,), lambda g: (2.0 * g * xv,))


def clip(x, lo, hi):
    xv = value_of(x)
    out = np.clip(xv, lo, hi)
    inside = (xv > lo) & (xv < hi)
    return _emit("clip", out, (x,), lambda g: (g * inside,))


TRANSFERS = {
    "logistic": sigmoid,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "identity": identity,
}


def transfer(name):
    try:
        return TRANSFERS[name]
    except KeyError:
        raise ValueError("unknown transfer function %r (choose from %s)"
                         % (name, sorted(TRANSFERS)))


# -- log-domain helpers -------------------------------------------------------

def logsumexp(v, axis=None):
    """``log(sum(exp(v)))`` computed by shifting with the maximum."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("logsumexp of an empty input")
    m = np.max(v, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True))
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


# -- likelihoods --------------------------------------------------------------

def _expand_mask(mask, shape):
    if mask is None:
        return np.ones(shape)
    m = np.asarray(mask, dtype=np.float64)
    while m.ndim < len(shape):
        m = m[..., None]
    return np.broadcast_to(m, shape)


def _per_sequence(elementwise, ndim):
    if ndim == 3:
        return elementwise.sum(axis=(0, 2))
    return np.atleast_1d(elementwise.sum())


def _fold_per_sequence(g, shape):
    # Adjoint of _per_sequence: spread the per-sequence gradient back over entries.
    if len(shape) == 3:
        return np.broadcast_to(g[None, :, None], shape)
    return np.broadcast_to(g.reshape(()), shape)


def bernoulli_nll(probs, targets, mask=None):
    """Masked Bernoulli negative log-likelihood.

    Probabilities are clamped to ``[EPS_PROB, 1 - EPS_PROB]`` before taking
    logs.  Returns ``(per_sequence, total)``; for ``T x B x K`` inputs the
    per-sequence vector has length ``B``.
    """
    pv = value_of(probs)
    t = np.asarray(targets, dtype=np.float64)
    if pv.shape != t.shape:
        raise DimensionError("probs %s and targets %s differ" % (pv.shape, t.shape))
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ValueError("bernoulli_nll targets must be binary")
    m = _expand_mask(mask, pv.shape)
    pc = np.clip(pv, EPS_PROB, 1.0 - EPS_PROB)
    elem = -(t * np.log(pc) + (1.0 - t) * np.log1p(-pc)) * m
    inside = (pv > EPS_PROB) & (pv < 1.0 - EPS_PROB)

    def vjp(g):
        d = (-t / pc + (1.0 - t) / (1.0 - pc)) * m * inside
        return (_fold_per_sequence(g, pv.shape) * d,)

    per_seq = _emit("bernoulli_nll", _per_sequence(elem, pv.ndim), (probs,), vjp)
    return per_seq, reduce_sum(per_seq)


def gaussian_nll(mean, std, targets, mask=None):
    """Masked Gaussian negative log-likelihood with standard deviation ``std``.

    ``std`` may be a positive scalar or an array/tensor broadcastable to
    ``mean``.  Returns ``(per_sequence, total)``.
    """
    mv = value_of(mean)
    sv = value_of(std)
    t = np.asarray(targets, dtype=np.float64)
    if mv.shape != t.shape:
        raise DimensionError("mean %s and targets %s differ" % (mv.shape, t.shape))
    if np.any(sv <= 0):
        raise ValueError("gaussian_nll requires std > 0")
    m = _expand_mask(mask, mv.shape)
    r = (t - mv) / sv
    elem = (0.5 * r * r + np.log(sv) + 0.5 * LOG_2PI) * m

    def vjp(g):
        gf = _fold_per_sequence(g, mv.shape) * m
        gm = -gf * r / sv
        gs = None
        if isinstance(std, Tensor):
            gs = _unbroadcast(gf * (1.0 - r * r) / sv, sv.shape)
        return gm, gs

    per_seq = _emit("gaussian_nll", _per_sequence(elem, mv.ndim), (mean, std), vjp)
    return per_seq, reduce_sum(per_seq)
