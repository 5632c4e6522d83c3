"""Dataset loading, batching, standardisation and synthetic benchmarks.

File formats are documented in ``docs/formats.md``.
"""

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats as sps

from .rnn import SequenceBatch

STD_FLOOR = 1e-8
DEFAULT_CHANNELS = 88


class DataFormatError(ValueError):
    """A data file could not be parsed; the message names the location."""


@dataclass
class Standardization:
    mean: np.ndarray
    std: np.ndarray

    def _check(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape[-1] != self.mean.size:
            raise DataFormatError("data has %d channels, standardisation expects %d"
                                  % (values.shape[-1], self.mean.size))
        return values

    def apply(self, values):
        return (self._check(values) - self.mean) / self.std

    def invert(self, values):
        return self._check(values) * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass
class Dataset:
    """Variable-length sequences (each ``T_i x K``) of one feature kind."""

    sequences: list
    kind: str = "real"
    ids: list = None
    channel_names: list = None
    stats: Standardization = None
    oracle: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("binary", "real"):
            raise ValueError("kind must be 'binary' or 'real'")
        self.sequences = [np.asarray(s, dtype=np.float64) for s in self.sequences]
        if self.ids is None:
            self.ids = [str(i) for i in range(len(self.sequences))]
        if len(self.ids) != len(self.sequences):
            raise ValueError("ids and sequences differ in length")
        if self.kind == "binary":
            for i, s in enumerate(self.sequences):
                if not np.all((s == 0) | (s == 1)):
                    raise ValueError("binary dataset has non-binary values in sequence %d" % i)
        if self.stats is not None and self.kind != "real":
            raise ValueError("standardisation applies to real-valued data only")

    def __len__(self):
        return len(self.sequences)

    @property
    def n_features(self):
        return self.sequences[0].shape[1] if self.sequences else 0

    def subset(self, indices):
        idx = [int(i) for i in indices]
        return replace(self, sequences=[self.sequences[i] for i in idx],
                       ids=[self.ids[i] for i in idx], oracle=dict(self.oracle))

    def batch(self):
        return SequenceBatch.from_sequences(self.sequences)


def as_sequences(d):
    if isinstance(d, Dataset):
        return d.sequences
    if isinstance(d, SequenceBatch):
        return d.sequences()
    return [np.asarray(s, dtype=np.float64) for s in d]


# -- event sequences ------------------------------------------------------------

def events_to_binary(steps, channels=DEFAULT_CHANNELS):
    out = np.zeros((len(steps), channels))
    for t, events in enumerate(steps):
        for e in events:
            if not 0 <= e < channels:
                raise ValueError("event index %d outside range [0, %d)" % (e, channels))
            out[t, e] = 1.0
    return out


def binary_to_events(values):
    return [[int(i) for i in np.flatnonzero(row)] for row in np.asarray(values)]


def parse_event_line(line):
    steps = []
    for field_ in line.split(";"):
        field_ = field_.strip()
        if not field_:
            steps.append([])
            continue
        events = [int(tok) for tok in field_.split(",")]
        if any(b <= a for a, b in zip(events, events[1:])):
            raise ValueError("events must be strictly increasing: %s" % field_)
        steps.append(events)
    return steps


def load_event_sequences(path, channels=DEFAULT_CHANNELS):
    """Read one sequence per line into a binary dataset of ``channels`` columns.

    Lines starting with ``#`` are comments.  An empty line is a sequence of
    one silent step.
    """
    seqs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if line.startswith("#"):
                continue
            try:
                steps = parse_event_line(line)
                seqs.append(events_to_binary(steps, channels))
            except ValueError as err:
                raise DataFormatError("%s:%d: %s" % (path, lineno, err)) from None
    return Dataset(seqs, kind="binary")


def format_event_line(values):
    return ";".join(",".join(str(e) for e in step) for step in binary_to_events(values))


def write_event_sequences(path, sequences):
    with open(path, "w", encoding="utf-8") as fh:
        for s in as_sequences(sequences):
            s = np.asarray(s)
            if not np.all((s == 0) | (s == 1)):
                raise ValueError("event files hold binary sequences only")
            fh.write(format_event_line(s) + "\n")


# -- real-valued tables ---------------------------------------------------------

def load_real_sequences(path, standardize=False):
    """Read a CSV table with a ``seq_id`` column into a real-valued dataset.

    Rows are grouped by ``seq_id`` in order of first appearance.
    ``standardize`` may be ``True`` (fit statistics on this file) or a
    :class:`Standardization` fitted elsewhere, e.g. on the training split.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("%s: missing header row" % path) from None
        header = [h.strip() for h in header]
        if "seq_id" not in header:
            raise DataFormatError("%s:1: header has no seq_id column" % path)
        id_col = header.index("seq_id")
        names = [h for i, h in enumerate(header) if i != id_col]
        groups = {}
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError("%s:%d: expected %d fields, got %d"
                                      % (path, lineno, len(header), len(row)))
            vals = []
            for col, cell in enumerate(row):
                if col == id_col:
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise DataFormatError("%s:%d: column %d (%s): non-numeric value %r"
                                          % (path, lineno, col + 1, header[col], cell)) from None
                if not np.isfinite(v):
                    raise DataFormatError("%s:%d: column %d (%s): non-finite value"
                                          % (path, lineno, col + 1, header[col]))
                vals.append(v)
            groups.setdefault(row[id_col].strip(), []).append(vals)
    ds = Dataset([np.array(v).reshape(len(v), len(names)) for v in groups.values()],
                 kind="real", ids=list(groups), channel_names=names)
    if standardize is True:
        return standardize_dataset(ds)
    if isinstance(standardize, Standardization):
        return standardize_dataset(ds, standardize)
    return ds


def write_real_sequences(path, sequences, ids=None, channel_names=None):
    seqs = as_sequences(sequences)
    if ids is None:
        ids = sequences.ids if isinstance(sequences, Dataset) else [str(i) for i in range(len(seqs))]
    k = seqs[0].shape[1] if seqs else 0
    if channel_names is None:
        channel_names = getattr(sequences, "channel_names", None) or ["c%d" % i for i in range(k)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seq_id"] + list(channel_names))
        for sid, s in zip(ids, seqs):
            for row in s:
                w.writerow([sid] + [repr(float(v)) for v in row])


def fit_standardization(dataset):
    allrows = np.concatenate(as_sequences(dataset), axis=0)
    std = allrows.std(axis=0)
    return Standardization(allrows.mean(axis=0), np.maximum(std, STD_FLOOR))


def standardize_dataset(dataset, stats=None):
    """Standardise per channel; statistics are fitted on ``dataset`` unless given."""
    if dataset.kind != "real":
        raise ValueError("only real-valued datasets can be standardised")
    stats = stats or fit_standardization(dataset)
    return replace(dataset, sequences=[stats.apply(s) for s in dataset.sequences], stats=stats)


def destandardize(values, stats):
    return stats.invert(values)


# -- batching and splits --------------------------------------------------------

def batch_indices(n, batch_size, seed=None):
    """Index groups covering ``range(n)`` once; shuffled when ``seed`` is given."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(n) if seed is None else np.random.default_rng(seed).permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def make_batches(dataset, batch_size, seed=None):
    """Yield padded :class:`SequenceBatch` objects, each sequence exactly once."""
    seqs = as_sequences(dataset)
    for idx in batch_indices(len(seqs), batch_size, seed):
        yield SequenceBatch.from_sequences([seqs[i] for i in idx])


def split_dataset(dataset, seed=0, fractions=(0.8, 0.1, 0.1)):
    """Seeded random ``(train, valid, test)`` split."""
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_valid = int(round(fractions[1] * n))
    return (dataset.subset(order[:n_train]),
            dataset.subset(order[n_train:n_train + n_valid]),
            dataset.subset(order[n_train + n_valid:]))


def load_manifest(path):
    """Read a JSON split manifest ``{"train": [...], "valid": [...], "test": [...]}``.

    Entries are sequence ids (strings) or positional indices (integers).
    """
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    unknown = set(manifest) - {"train", "valid", "test"}
    if unknown:
        raise DataFormatError("%s: unknown split names %s" % (path, sorted(unknown)))
    return manifest


def apply_manifest(dataset, manifest):
    pos = {sid: i for i, sid in enumerate(dataset.ids)}
    out = []
    for name in ("train", "valid", "test"):
        idx = []
        for entry in manifest.get(name, []):
            if isinstance(entry, int):
                idx.append(entry)
            elif entry in pos:
                idx.append(pos[entry])
            else:
                raise DataFormatError("manifest %s split names unknown sequence %r" % (name, entry))
        out.append(dataset.subset(idx))
    return tuple(out)


# -- synthetic benchmarks -------------------------------------------------------

def synth_coupled_binary(n, T, channels=4, seed=0):
    """Each step is all-ones or all-zeros with probability 1/2, independently.

    The oracle holds the true per-step NLL (ln 2) and the best per-step NLL of
    any model whose output channels are conditionally independent
    (``channels * ln 2``).
    """
    if channels < 2:
        raise ValueError("coupled data needs at least two channels")
    rng = np.random.default_rng(seed)
    on = rng.random((n, T)) < 0.5
    seqs = [np.repeat(on[i][:, None], channels, axis=1).astype(np.float64) for i in range(n)]
    return Dataset(seqs, kind="binary", oracle={
        "true_nll_per_step": float(np.log(2.0)),
        "factorized_nll_per_step": float(channels * np.log(2.0)),
    })


def synth_sines(n, T, seed=0, noise=0.05, freq=(0.15, 0.3), amplitude=(0.8, 1.2)):
    """Two-channel rotating sinusoids with random frequency, phase and amplitude."""
    rng = np.random.default_rng(seed)
    t = np.arange(T)
    seqs = []
    for _ in range(n):
        w = rng.uniform(*freq)
        phi = rng.uniform(0.0, 2.0 * np.pi)
        a = rng.uniform(*amplitude)
        s = a * np.stack([np.cos(w * t + phi), np.sin(w * t + phi)], axis=1)
        seqs.append(s + noise * rng.standard_normal(s.shape))
    return Dataset(seqs, kind="real", channel_names=["cos", "sin"])


def _check_linear(model):
    g = model.gen
    if model.likelihood != "gaussian" or g.f_h != "identity" or g.f_y != "identity":
        raise ValueError("linear-Gaussian oracle needs identity transfers and a gaussian likelihood")


def linear_gaussian_marginal(model, T):
    """Mean and covariance of ``x[:T]`` (flattened step-major) for a linear model.

    Every hidden state is tracked as an affine function of the independent
    standard-normal noise ``(z_1..z_T, e_1..e_T)``; the observation noise has
    standard deviation ``model.output_std``.
    """
    _check_linear(model)
    g = model.gen
    K, H, L = g.n_in, g.n_hidden, model.latent_dim
    D = T * (L + K)
    x_off, x_coef = np.zeros(K), np.zeros((K, D))
    h_off, h_coef = np.zeros(H), np.zeros((H, D))
    means, coefs = [], []
    for t in range(T):
        h_off = x_off @ g.W_in + h_off @ g.W_rec + g.b_hid
        h_coef = g.W_in.T @ x_coef + g.W_rec.T @ h_coef
        if L:
            h_coef[:, t * L:(t + 1) * L] += model.W_lat.T
        x_off = h_off @ g.W_out + g.b_out
        x_coef = g.W_out.T @ h_coef
        e0 = T * L + t * K
        x_coef[:, e0:e0 + K] += model.output_std * np.eye(K)
        means.append(x_off)
        coefs.append(x_coef)
    A = np.concatenate(coefs, axis=0)
    return np.concatenate(means), A @ A.T


def linear_gaussian_nll(model, sequences):
    """Exact per-sequence marginal NLL under a linear-Gaussian model."""
    seqs = as_sequences(sequences)
    out = np.empty(len(seqs))
    by_length = {}
    for i, s in enumerate(seqs):
        by_length.setdefault(s.shape[0], []).append(i)
    for T, idx in by_length.items():
        mean, cov = linear_gaussian_marginal(model, T)
        flat = np.stack([seqs[i].reshape(-1) for i in idx])
        out[idx] = -np.atleast_1d(sps.multivariate_normal(mean, cov).logpdf(flat))
    return out


def synth_linear_gaussian(n, T, seed, model):
    """Sample ``n`` sequences of length ``T`` from a linear-Gaussian model.

    The oracle carries the exact marginal NLL of each sequence.
    """
    if T > 6:
        raise ValueError("the analytic oracle is limited to T <= 6")
    mean, cov = linear_gaussian_marginal(model, T)
    rng = np.random.default_rng(seed)
    draws = rng.multivariate_normal(mean, cov, size=n, method="cholesky")
    K = model.n_features
    seqs = [d.reshape(T, K) for d in draws]
    return Dataset(seqs, kind="real", oracle={"nll": linear_gaussian_nll(model, seqs)})
