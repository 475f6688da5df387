"""Run-to-failure records and their on-disk layout.

Each experiment is stored in its own directory::

    <root>/<id>/meta           key = value text (id, condition, split, failure_time, timestamps)
    <root>/<id>/segments.bin   float64 blob, shape [n_obs, C, L]
    <root>/<id>/latent.bin     float64 blob, shape [n_obs] (simulated data only)

Blobs are ``b"GNRLARR1"``, uint8 ndim, uint64 dims, then little-endian
float64 values in C order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BLOB_MAGIC = b"GNRLARR1"


@dataclass
class Experiment:
    exp_id: str
    condition: str
    timestamps: np.ndarray
    segments: np.ndarray
    failure_time: float
    split: str = "train"
    latent: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.segments = np.asarray(self.segments, dtype=np.float64)
        if self.segments.ndim != 3 or self.segments.shape[0] != self.timestamps.shape[0]:
            raise ValueError(f"{self.exp_id}: segments must be [n_obs, C, L] matching the timestamps")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError(f"{self.exp_id}: timestamps must be strictly increasing")
        if self.timestamps.size and self.failure_time < self.timestamps[-1]:
            raise ValueError(f"{self.exp_id}: failure_time precedes the last observation")

    @property
    def n_obs(self):
        return self.timestamps.shape[0]

    @property
    def rul(self):
        return self.failure_time - self.timestamps


def write_blob(path, array):
    arr = np.ascontiguousarray(array, dtype="<f8")
    header = BLOB_MAGIC + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def read_blob(path):
    blob = Path(path).read_bytes()
    if blob[:len(BLOB_MAGIC)] != BLOB_MAGIC:
        raise ValueError(f"{path}: not an array blob")
    pos = len(BLOB_MAGIC)
    (ndim,) = struct.unpack_from("<B", blob, pos)
    pos += 1
    shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
    pos += 8 * ndim
    values = np.frombuffer(blob, dtype="<f8", offset=pos)
    if values.size != int(np.prod(shape)):
        raise ValueError(f"{path}: payload does not match header shape {shape}")
    return values.reshape(shape).astype(np.float64)


def _fmt(x):
    return repr(float(x))


def save_experiment(exp, root):
    d = Path(root) / exp.exp_id
    d.mkdir(parents=True, exist_ok=True)
    meta = [
        f"id = {exp.exp_id}",
        f"condition = {exp.condition}",
        f"split = {exp.split}",
        f"failure_time = {_fmt(exp.failure_time)}",
        "timestamps = " + " ".join(_fmt(t) for t in exp.timestamps),
    ]
    (d / "meta").write_text("\n".join(meta) + "\n")
    write_blob(d / "segments.bin", exp.segments)
    if exp.latent is not None:
        write_blob(d / "latent.bin", exp.latent)


def load_experiment(directory):
    d = Path(directory)
    meta = {}
    for line in (d / "meta").read_text().splitlines():
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    latent = read_blob(d / "latent.bin") if (d / "latent.bin").exists() else None
    return Experiment(
        exp_id=meta["id"],
        condition=meta.get("condition", ""),
        timestamps=np.array([float(t) for t in meta["timestamps"].split()]),
        segments=read_blob(d / "segments.bin"),
        failure_time=float(meta["failure_time"]),
        split=meta.get("split", "train"),
        latent=latent,
    )


def save_dataset(train, test, root):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for exp in train:
        exp.split = "train"
        save_experiment(exp, root)
    for exp in test:
        exp.split = "test"
        save_experiment(exp, root)


def load_dataset(root):
    """Load every experiment under ``root``; returns ``(train, test)`` sorted by id."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} does not exist")
    exps = [load_experiment(p) for p in sorted(root.iterdir()) if (p / "meta").exists()]
    if not exps:
        raise FileNotFoundError(f"no experiments found under {root}")
    train = [e for e in exps if e.split == "train"]
    test = [e for e in exps if e.split == "test"]
    return train, test
