"""Simple and bidirectional recurrent networks.

The hidden and output recurrences are

    h_t = f_h(x_t W_in + h_{t-1} W_rec + b_hid)
    y_t = f_y(h_t W_out + b_out)

evaluated over padded ``T x B x K`` batches.  Parameters may hold plain
arrays or traced tensors; see :meth:`RnnParams.watch`.
"""

import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import core
from .core import DimensionError

ARRAY_NAMES = ("W_in", "W_rec", "W_out", "b_hid", "b_out")


@dataclass
class SequenceBatch:
    """Padded observations ``values`` (T x B x K) with validity ``mask`` (T x B).

    The mask is prefix-contiguous per sequence and padded entries are zero.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.values.ndim != 3:
            raise DimensionError("values must be T x B x K, got %s" % (self.values.shape,))
        if self.mask.shape != self.values.shape[:2]:
            raise DimensionError("mask %s does not match values %s"
                                 % (self.mask.shape, self.values.shape))
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise ValueError("mask must be 0/1")
        if np.any(np.diff(self.mask, axis=0) > 0):
            raise ValueError("mask must be prefix-contiguous per sequence")
        if np.any(self.values[self.mask == 0] != 0):
            raise ValueError("masked-out entries of values must be zero")

    @classmethod
    def from_sequences(cls, sequences, length=None):
        """Pad a list of ``T_i x K`` arrays into a batch."""
        seqs = [np.asarray(s, dtype=np.float64) for s in sequences]
        if not seqs:
            raise ValueError("cannot batch an empty list of sequences")
        k = seqs[0].shape[1]
        T = max(s.shape[0] for s in seqs) if length is None else length
        values = np.zeros((T, len(seqs), k))
        mask = np.zeros((T, len(seqs)))
        for b, s in enumerate(seqs):
            if s.ndim != 2 or s.shape[1] != k:
                raise DimensionError("sequence %d has shape %s, expected (T, %d)" % (b, s.shape, k))
            values[:s.shape[0], b] = s
            mask[:s.shape[0], b] = 1.0
        return cls(values, mask)

    @property
    def T(self):
        return self.values.shape[0]

    @property
    def B(self):
        return self.values.shape[1]

    @property
    def features(self):
        return self.values.shape[2]

    @property
    def lengths(self):
        return self.mask.sum(axis=0).astype(int)

    def sequences(self):
        """Unpadded per-sequence arrays."""
        return [self.values[:n, b].copy() for b, n in enumerate(self.lengths)]

    def select(self, index):
        return SequenceBatch(self.values[:, index], self.mask[:, index])


@dataclass
class RnnParams:
    W_in: np.ndarray
    W_rec: np.ndarray
    W_out: np.ndarray
    b_hid: np.ndarray
    b_out: np.ndarray
    f_h: str = "tanh"
    f_y: str = "identity"

    def __post_init__(self):
        core.transfer(self.f_h)
        core.transfer(self.f_y)
        if core.is_traced(*(getattr(self, n) for n in ARRAY_NAMES)):
            return
        for n in ARRAY_NAMES:
            arr = np.asarray(getattr(self, n), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError("%s has non-finite entries" % n)
            setattr(self, n, arr)
        k, g = self.W_in.shape
        if self.W_rec.shape != (g, g):
            raise DimensionError("W_rec must be %dx%d, got %s" % (g, g, self.W_rec.shape))
        if self.W_out.ndim != 2 or self.W_out.shape[0] != g:
            raise DimensionError("W_out must have %d rows, got %s" % (g, self.W_out.shape))
        if self.b_hid.shape != (g,):
            raise DimensionError("b_hid must have shape (%d,)" % g)
        if self.b_out.shape != (self.W_out.shape[1],):
            raise DimensionError("b_out must have shape (%d,)" % self.W_out.shape[1])
        if min(k, g, self.W_out.shape[1]) < 1:
            raise DimensionError("all extents must be positive")

    @property
    def n_in(self):
        return self.W_in.shape[0]

    @property
    def n_hidden(self):
        return self.W_rec.shape[0]

    @property
    def n_out(self):
        return self.W_out.shape[1]

    def arrays(self, prefix=""):
        return {prefix + n: core.value_of(getattr(self, n)) for n in ARRAY_NAMES}

    @classmethod
    def from_arrays(cls, arrays, prefix="", f_h="tanh", f_y="identity"):
        return cls(**{n: arrays[prefix + n] for n in ARRAY_NAMES}, f_h=f_h, f_y=f_y)

    def with_arrays(self, arrays, prefix=""):
        return replace(self, **{n: arrays[prefix + n] for n in ARRAY_NAMES})

    def watch(self, tape, prefix=""):
        """A copy whose arrays are traced leaves on ``tape``."""
        return replace(self, **{n: tape.watch(getattr(self, n), prefix + n) for n in ARRAY_NAMES})


def init_params(dims, scheme="default", seed=0, f_h="tanh", f_y="identity"):
    """Create parameters for an RNN with ``dims = (n_in, n_hidden, n_out)``.

    ``default`` draws input/output weights uniformly in
    ``+-sqrt(6 / (fan_in + fan_out))``, scales a Gaussian recurrent matrix to
    spectral radius one and zeroes the biases.  ``zero`` sets everything to
    zero.
    """
    n_in, n_hid, n_out = (int(d) for d in dims)
    if min(n_in, n_hid, n_out) < 1:
        raise ValueError("dims must be positive, got %s" % (dims,))
    if scheme == "zero":
        return RnnParams(np.zeros((n_in, n_hid)), np.zeros((n_hid, n_hid)),
                         np.zeros((n_hid, n_out)), np.zeros(n_hid), np.zeros(n_out), f_h, f_y)
    if scheme != "default":
        raise ValueError("unknown init scheme %r" % scheme)
    rng = np.random.default_rng(seed)
    W_in = glorot_uniform(rng, n_in, n_hid)
    W_out = glorot_uniform(rng, n_hid, n_out)
    W_rec = rng.standard_normal((n_hid, n_hid))
    W_rec /= np.max(np.abs(np.linalg.eigvals(W_rec)))
    return RnnParams(W_in, W_rec, W_out, np.zeros(n_hid), np.zeros(n_out), f_h, f_y)


def glorot_uniform(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _check_inputs(params, inputs):
    if inputs.features != params.n_in:
        raise DimensionError("input width %d does not match W_in %s"
                             % (inputs.features, core.value_of(params.W_in).shape))


def _mask3(mask):
    return mask[:, :, None]


def run_hidden(params, values, mask, h0=None, extra=()):
    """Hidden states for every step.

    ``extra`` holds additional ``(inputs, weights)`` pairs added to the hidden
    pre-activation; the latent-input map of the generating model uses it.
    Masked steps carry the previous state forward.
    """
    T, B = mask.shape
    f_h = core.transfer(params.f_h)
    drive = core.add(core.matmul(values, params.W_in), params.b_hid)
    for inp, w in extra:
        drive = core.add(drive, core.matmul(inp, w))
    h = np.zeros((B, params.n_hidden)) if h0 is None else h0
    hs = []
    for t in range(T):
        m = mask[t]
        if not m.any():
            hs.append(h)
            continue
        h_new = f_h(core.add(drive[t], core.matmul(h, params.W_rec)))
        if m.all():
            h = h_new
        else:
            mc = m[:, None]
            h = core.add(core.mul(h_new, mc), core.mul(h, 1.0 - mc))
        hs.append(h)
    return core.stack(hs)


def rnn_forward(params, inputs, h0=None):
    """Run the network; returns ``(hidden, outputs)`` of shapes T x B x H and T x B x O.

    Outputs at masked steps are zero.
    """
    _check_inputs(params, inputs)
    hidden = run_hidden(params, inputs.values, inputs.mask, h0)
    return hidden, readout(params, hidden, inputs.mask)


def readout(params, hidden, mask):
    f_y = core.transfer(params.f_y)
    y = f_y(core.add(core.matmul(hidden, params.W_out), params.b_out))
    if not mask.all():
        y = core.mul(y, _mask3(mask))
    return y


def reversal_index(mask):
    """Index arrays that reverse every sequence within its valid span.

    The permutation is an involution: applying it twice restores the order.
    """
    T, B = mask.shape
    lengths = mask.sum(axis=0).astype(int)
    t = np.arange(T)[:, None]
    rev = np.where(t < lengths[None, :], lengths[None, :] - 1 - t, t)
    return rev, np.broadcast_to(np.arange(B)[None, :], (T, B))


def birnn_forward(fwd, bwd, inputs):
    """Bidirectional network output.

    One RNN reads left to right, the other right to left over each sequence's
    valid span; their output pre-activations are summed and passed through
    the forward half's ``f_y``.
    """
    if fwd.n_out != bwd.n_out:
        raise DimensionError("forward and backward output widths differ: %d vs %d"
                             % (fwd.n_out, bwd.n_out))
    _check_inputs(fwd, inputs)
    _check_inputs(bwd, inputs)
    idx = reversal_index(inputs.mask)
    hf = run_hidden(fwd, inputs.values, inputs.mask)
    hb = core.getitem(run_hidden(bwd, inputs.values[idx], inputs.mask), idx)
    pre = core.add(core.matmul(hf, fwd.W_out), core.matmul(hb, bwd.W_out))
    pre = core.add(pre, core.add(fwd.b_out, bwd.b_out))
    y = core.transfer(fwd.f_y)(pre)
    if not inputs.mask.all():
        y = core.mul(y, _mask3(inputs.mask))
    return y


# -- parameter container --------------------------------------------------------
#
# Layout (all integers little-endian):
#   b"STORNPAR"  u32 version  u32 header_len  header (UTF-8 JSON)  u32 count
#   count x [u16 name_len  name (UTF-8)  u8 ndim  ndim x u64 extent  float64 data]
# Entries are sorted by name and data is row-major, so files are byte-stable.

MAGIC = b"STORNPAR"
FORMAT_VERSION = 1


def save_arrays(path, arrays, header=None):
    header_bytes = json.dumps(header or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype="<f8")
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack("<%dQ" % arr.ndim, *arr.shape))
            fh.write(arr.tobytes())


def load_arrays(path):
    """Read a container; returns ``(arrays, header)``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != MAGIC:
        raise ValueError("%s is not a parameter container" % path)
    pos = 8
    version, hlen = struct.unpack_from("<II", buf, pos)
    pos += 8
    if version != FORMAT_VERSION:
        raise ValueError("unsupported container version %d" % version)
    header = json.loads(buf[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from("<%dQ" % ndim, buf, pos)
        pos += 8 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    return arrays, header


def save_params(path, params, header=None):
    hdr = {"f_h": params.f_h, "f_y": params.f_y}
    hdr.update(header or {})
    save_arrays(path, params.arrays(), hdr)


def load_params(path):
    arrays, header = load_arrays(path)
    return RnnParams.from_arrays(arrays, f_h=header.get("f_h", "tanh"),
                                 f_y=header.get("f_y", "identity"))
