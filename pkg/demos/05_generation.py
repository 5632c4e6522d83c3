"""Continuing a prefix by ancestral sampling, and the CLI round trip.

Run: python demos/05_generation.py
"""

import tempfile
from pathlib import Path

import yaml

from storn import cli

work = Path(tempfile.mkdtemp())
cli.main(["synth", "sines", "--n", "60", "--length", "40", "--seed", "1",
          "--out", str(work / "sines.csv")])
config = {
    "seed": 0,
    "output_dir": str(work / "run"),
    "data": {"train": str(work / "sines.csv"), "kind": "real"},
    "model": {"hidden": 12, "latent": 2, "transfer": "tanh"},
    "train": {"batch_size": 10, "max_epochs": 15},
}
(work / "run.yaml").write_text(yaml.safe_dump(config))
cli.main(["train", str(work / "run.yaml")])
cli.main(["sample", str(work / "run" / "model.storn"), str(work / "sines.csv"),
          "--prefix-length", "20", "--horizon", "20", "--count", "3", "--seed", "7",
          "--out", str(work / "samples.csv")])

log = (work / "run" / "train_log.csv").read_text().splitlines()
print("final epoch of the training log:")
print(log[0])
print(log[-1])
rows = (work / "samples.csv").read_text().splitlines()
print("%d sample rows; the last three:" % (len(rows) - 1))
print("\n".join(rows[-3:]))
