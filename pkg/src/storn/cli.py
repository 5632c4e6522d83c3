"""Command-line interface: ``storn {train,eval,sample,impute,synth}``.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml

from . import data, estimator, optimizer, tasks
from .core import TRANSFERS, NonFiniteError
from .model import LIKELIHOODS, RECOGNITION_MODES, StornModel, load_model, save_model
from .rnn import SequenceBatch
from .seeding import derive_seed

log = logging.getLogger("storn")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    train: str = None
    valid: str = None
    manifest: str = None
    kind: str = "binary"
    channels: int = 88
    standardize: bool = True


@dataclass
class ModelSection:
    hidden: int = 32
    latent: int = 4
    recog_hidden: int = None
    transfer: str = "logistic"
    recog_transfer: str = None
    likelihood: str = None
    output_std: float = 1.0
    recognition: str = "causal"
    init: str = "default"


@dataclass
class TrainSection:
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 20
    clip: float = 10.0
    rho: float = 0.95
    eps: float = 1e-6
    momentum: float = 0.9


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)


SECTIONS = {"data": DataSection, "model": ModelSection, "train": TrainSection}
PATH_FIELDS = ("train", "valid", "manifest")


def _coerce(path, value, kind):
    if value is None:
        return None
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError("%s: expected true/false, got %r" % (path, value))
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError("%s: expected an integer, got %r" % (path, value))
        return value
    if kind is float:
        # YAML 1.1 reads "1e-6" (no dot) as a string
        if isinstance(value, str):
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("%s: expected a number, got %r" % (path, value))
        return float(value)
    if not isinstance(value, str):
        raise ConfigError("%s: expected a string, got %r" % (path, value))
    return value


def _section(cls, raw, prefix):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("%s: expected a mapping" % prefix)
    known = {f.name: f.type for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError("%s: unknown key(s) %s" % (prefix, ", ".join(unknown)))
    return cls(**{k: _coerce("%s.%s" % (prefix, k), v, known[k]) for k, v in raw.items()})


def parse_config(raw, base_dir="."):
    """Validate a config mapping; relative data paths resolve against ``base_dir``."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    unknown = sorted(set(raw) - {"seed", "output_dir"} - set(SECTIONS))
    if unknown:
        raise ConfigError("unknown top-level key(s) %s" % ", ".join(unknown))
    cfg = RunConfig(
        seed=_coerce("seed", raw.get("seed", 0), int),
        output_dir=_coerce("output_dir", raw.get("output_dir", "runs/default"), str),
        data=_section(DataSection, raw.get("data"), "data"),
        model=_section(ModelSection, raw.get("model"), "model"),
        train=_section(TrainSection, raw.get("train"), "train"),
    )
    for name in PATH_FIELDS:
        p = getattr(cfg.data, name)
        if p is not None and not os.path.isabs(p):
            setattr(cfg.data, name, os.path.normpath(os.path.join(base_dir, p)))
    if not os.path.isabs(cfg.output_dir):
        cfg.output_dir = os.path.normpath(os.path.join(base_dir, cfg.output_dir))
    _validate(cfg)
    return cfg


def _validate(cfg):
    d, m, t = cfg.data, cfg.model, cfg.train
    if d.train is None:
        raise ConfigError("data.train: required")
    if d.kind not in ("binary", "real"):
        raise ConfigError("data.kind: must be 'binary' or 'real'")
    if m.likelihood is None:
        m.likelihood = "bernoulli" if d.kind == "binary" else "gaussian"
    if m.likelihood not in LIKELIHOODS:
        raise ConfigError("model.likelihood: must be one of %s" % (LIKELIHOODS,))
    if (m.likelihood == "bernoulli") != (d.kind == "binary"):
        raise ConfigError("model.likelihood: %s does not fit %s data" % (m.likelihood, d.kind))
    if m.recognition not in RECOGNITION_MODES:
        raise ConfigError("model.recognition: must be one of %s" % (RECOGNITION_MODES,))
    if m.hidden < 1 or (m.recog_hidden is not None and m.recog_hidden < 1):
        raise ConfigError("model.hidden/recog_hidden: must be >= 1")
    if m.latent < 0:
        raise ConfigError("model.latent: must be >= 0")
    if not (np.isfinite(m.output_std) and m.output_std > 0):
        raise ConfigError("model.output_std: must be a positive number")
    if m.init not in ("default", "zero"):
        raise ConfigError("model.init: must be 'default' or 'zero'")
    for name in ("transfer", "recog_transfer"):
        value = getattr(m, name)
        if value is not None and value not in TRANSFERS:
            raise ConfigError("model.%s: must be one of %s" % (name, sorted(TRANSFERS)))
    if d.channels < 1:
        raise ConfigError("data.channels: must be >= 1")
    try:
        optimizer.TrainConfig(**asdict(t), seed=cfg.seed)
    except ValueError as err:
        raise ConfigError("train: %s" % err)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as err:
        raise ConfigError("cannot read config %s: %s" % (path, err))
    except yaml.YAMLError as err:
        raise ConfigError("config %s is not valid YAML: %s" % (path, err))
    return parse_config(raw or {}, os.path.dirname(os.path.abspath(path)))


def dump_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(asdict(cfg), fh, sort_keys=True)


# -- data helpers ---------------------------------------------------------------

def _require_file(path):
    if path is None or not os.path.isfile(path):
        raise ConfigError("data file not found: %s" % path)


def _load(path, kind, channels, stats=None, standardize=False):
    _require_file(path)
    if kind == "binary":
        return data.load_event_sequences(path, channels)
    if stats is not None:
        return data.load_real_sequences(path, stats)
    return data.load_real_sequences(path, standardize)


def _load_splits(cfg):
    d = cfg.data
    full = _load(d.train, d.kind, d.channels)
    if d.manifest is not None:
        _require_file(d.manifest)
        train, valid, _ = data.apply_manifest(full, data.load_manifest(d.manifest))
    elif d.valid is not None:
        train, valid = full, _load(d.valid, d.kind, d.channels)
    else:
        train, valid, _ = data.split_dataset(full, derive_seed(cfg.seed, "split"))
    stats = None
    if d.kind == "real" and d.standardize:
        stats = data.fit_standardization(train)
        train = data.standardize_dataset(train, stats)
        valid = data.standardize_dataset(valid, stats)
    return train, valid, stats


def _checkpoint_extra(cfg, stats, n_features):
    return {
        "data_kind": cfg.data.kind,
        "channels": n_features,
        "standardization": None if stats is None else stats.to_dict(),
    }


def _open_checkpoint(path):
    if not os.path.isfile(path):
        raise ConfigError("checkpoint not found: %s" % path)
    model, header = load_model(path)
    stats = header.get("standardization")
    return model, header, (data.Standardization.from_dict(stats) if stats else None)


def _load_for_model(path, header, stats, model):
    ds = _load(path, header.get("data_kind", "binary"), header.get("channels", model.n_features),
               stats=stats)
    if len(ds) == 0:
        raise ConfigError("dataset %s is empty" % path)
    if ds.n_features != model.n_features:
        raise ConfigError("data width %d does not match checkpoint width %d"
                          % (ds.n_features, model.n_features))
    return ds


def _write_dataset(path, sequences, kind, stats=None, ids=None, channel_names=None):
    if kind == "binary":
        data.write_event_sequences(path, sequences)
    else:
        if stats is not None:
            sequences = [stats.invert(s) for s in sequences]
        data.write_real_sequences(path, sequences, ids, channel_names)


def _write_manifest(out_dir, files):
    """Written last: its presence marks a complete output directory."""
    entries = {}
    for name in files:
        with open(os.path.join(out_dir, name), "rb") as fh:
            blob = fh.read()
        entries[name] = {"bytes": len(blob), "sha256": hashlib.sha256(blob).hexdigest()}
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump({"files": entries}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _prepare_out(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    stale = os.path.join(out_dir, "manifest.json")
    if os.path.exists(stale):
        os.remove(stale)


# -- commands -------------------------------------------------------------------

def cmd_train(config_path):
    cfg = load_config(config_path)
    train, valid, stats = _load_splits(cfg)
    if len(train) == 0 or len(valid) == 0:
        raise ConfigError("training and validation splits must be non-empty")
    if train.n_features != valid.n_features:
        raise ConfigError("train and validation widths differ")
    m = cfg.model
    model = StornModel.create(
        train.n_features, m.hidden, m.latent, likelihood=m.likelihood,
        recognition=m.recognition, recog_hidden=m.recog_hidden, f_h=m.transfer,
        recog_f_h=m.recog_transfer, output_std=m.output_std, init=m.init,
        seed=derive_seed(cfg.seed, "init"))
    out = cfg.output_dir
    _prepare_out(out)
    extra = _checkpoint_extra(cfg, stats, train.n_features)
    save_model(os.path.join(out, "initial.storn"), model, extra)
    dump_config(cfg, os.path.join(out, "config.yaml"))
    tc = optimizer.TrainConfig(**asdict(cfg.train), seed=cfg.seed)
    result = optimizer.fit(model, train, valid, tc)
    save_model(os.path.join(out, "model.storn"), result.model,
               dict(extra, best_epoch=result.best_epoch))
    optimizer.write_log(os.path.join(out, "train_log.csv"), result.log,
                        os.path.join(out, "timing.csv"))
    _write_manifest(out, ["config.yaml", "initial.storn", "model.storn", "train_log.csv",
                          "timing.csv"])
    return EXIT_OK


def cmd_eval(checkpoint, data_path, num_samples, seed, out_path):
    model, header, stats = _open_checkpoint(checkpoint)
    ds = _load_for_model(data_path, header, stats, model)
    if num_samples < 1:
        raise ConfigError("--samples must be >= 1")
    nll, bound = estimator.evaluate(model, ds.batch(), num_samples, derive_seed(seed, "eval"))
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    estimator.write_report(out_path, ds.ids, nll, bound)
    return EXIT_OK


def cmd_sample(checkpoint, prefix_path, horizon, count, seed, out_path, prefix_length=None):
    if horizon < 0:
        raise ConfigError("--horizon must be >= 0")
    if count < 0:
        raise ConfigError("--count must be >= 0")
    model, header, stats = _open_checkpoint(checkpoint)
    kind = header.get("data_kind", "binary")
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    if count == 0:
        open(out_path, "w").close()
        return EXIT_OK
    ds = _load_for_model(prefix_path, header, stats, model)
    stimulus = ds.sequences[0]
    if prefix_length is not None:
        if not 0 < prefix_length <= len(stimulus):
            raise ConfigError("--prefix-length must be in [1, %d]" % len(stimulus))
        stimulus = stimulus[:prefix_length]
    prefix = SequenceBatch.from_sequences([stimulus] * count)
    samples = tasks.generate(model, prefix, horizon, derive_seed(seed, "sample")).sequences()
    if kind == "binary":
        samples = [(s >= 0.5).astype(np.float64) for s in samples]
    ids = ["sample_%03d" % i for i in range(count)]
    _write_dataset(out_path, samples, kind, stats, ids, ds.channel_names)
    return EXIT_OK


def cmd_impute(checkpoint, data_path, start, end, seed, out_dir):
    model, header, stats = _open_checkpoint(checkpoint)
    ds = _load_for_model(data_path, header, stats, model)
    kind = header.get("data_kind", "binary")
    try:
        spec = tasks.CorruptionSpec(start, end, seed=derive_seed(seed, "corrupt"))
        x = ds.batch()
        spec.check(x)
    except ValueError as err:
        raise ConfigError("invalid window: %s" % err)
    corrupted = tasks.corrupt(x, spec, kind)
    recon = tasks.impute(model, corrupted, spec)
    _prepare_out(out_dir)
    ext = ".events" if kind == "binary" else ".csv"
    names = ["corrupted" + ext, "imputed" + ext, "mse.csv"]
    _write_dataset(os.path.join(out_dir, names[0]), corrupted.sequences(), kind, stats,
                   ds.ids, ds.channel_names)
    _write_dataset(os.path.join(out_dir, names[1]), recon.sequences(), kind, stats,
                   ds.ids, ds.channel_names)
    imputed_mse = tasks.window_mse(recon, x, spec)
    noise_mse = tasks.window_mse(corrupted, x, spec)
    with open(os.path.join(out_dir, names[2]), "w") as fh:
        fh.write("seq_id,window_mse,noise_mse\n")
        for sid, a, b in zip(ds.ids, imputed_mse, noise_mse):
            fh.write("%s,%r,%r\n" % (sid, float(a), float(b)))
    _write_manifest(out_dir, names)
    return EXIT_OK


def cmd_synth(kind, n, length, channels, seed, out_path):
    if n < 1 or length < 1:
        raise ConfigError("--n and --length must be >= 1")
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    if kind == "coupled":
        ds = data.synth_coupled_binary(n, length, channels, seed)
        data.write_event_sequences(out_path, ds)
    elif kind == "sines":
        ds = data.synth_sines(n, length, seed)
        data.write_real_sequences(out_path, ds)
    else:
        raise ConfigError("unknown synthetic kind %r" % kind)
    if ds.oracle:
        with open(out_path + ".oracle.json", "w") as fh:
            json.dump(ds.oracle, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="storn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a YAML config")
    t.add_argument("config", help="YAML run configuration")

    e = sub.add_parser("eval", help="bound and importance-sampled NLL per sequence")
    e.add_argument("checkpoint", help="trained .storn file")
    e.add_argument("data", help="event or CSV sequence file")
    e.add_argument("--samples", type=int, default=100, help="importance samples per sequence")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True, help="report CSV path")

    s = sub.add_parser("sample", help="continue a stimulus prefix")
    s.add_argument("checkpoint")
    s.add_argument("prefix", help="file whose first sequence is the stimulus")
    s.add_argument("--horizon", type=int, required=True, help="steps to generate")
    s.add_argument("--count", type=int, default=1, help="number of continuations")
    s.add_argument("--prefix-length", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    i = sub.add_parser("impute", help="corrupt a window with noise and reconstruct it")
    i.add_argument("checkpoint")
    i.add_argument("data")
    i.add_argument("--window", type=int, nargs=2, metavar=("START", "END"), required=True)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--out", required=True, help="output directory")

    y = sub.add_parser("synth", help="write a synthetic benchmark dataset")
    y.add_argument("kind", choices=["coupled", "sines"])
    y.add_argument("--n", type=int, default=100)
    y.add_argument("--length", type=int, default=20)
    y.add_argument("--channels", type=int, default=4, help="binary channels (coupled only)")
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--out", required=True)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            return cmd_train(args.config)
        if args.command == "eval":
            return cmd_eval(args.checkpoint, args.data, args.samples, args.seed, args.out)
        if args.command == "sample":
            return cmd_sample(args.checkpoint, args.prefix, args.horizon, args.count,
                              args.seed, args.out, args.prefix_length)
        if args.command == "impute":
            return cmd_impute(args.checkpoint, args.data, args.window[0], args.window[1],
                              args.seed, args.out)
        return cmd_synth(args.kind, args.n, args.length, args.channels, args.seed, args.out)
    except NonFiniteError as err:
        print("storn: numerical failure: %s" % err, file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, data.DataFormatError) as err:
        print("storn: %s" % err, file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
