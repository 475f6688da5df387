"""Loader for the FEMTO / PRONOSTIA accelerated-life bearing recordings.

Expected layout: one subdirectory per experiment, named ``1_3`` or
``Bearing1_3``, holding one delimited-text file per 0.1 s segment whose name
starts with ``acc``. Each row is one sample; the last two columns are the
horizontal and vertical accelerations and any leading columns are clock
fields (hour, minute, second, microsecond). Temperature files are ignored.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .experiments import Experiment, save_dataset

log = logging.getLogger(__name__)

SEGMENT_LENGTH = 2556
SPACING = 10.0
CONDITIONS = {"A": (1800, 4.0), "B": (1650, 4.2), "C": (1500, 5.0)}  # rpm, kN
COUNT_SLACK = 2

_SPLIT_ROWS = """
1_2 train A 8700 871
1_3 train A 23740 2375
1_4 train A 14270 1428
1_5 train A 24620 2463
2_1 train B 9100 911
2_5 train B 23100 2311
2_6 train B 7000 701
3_3 train C 4330 434
1_1 test A 28072 2803
1_6 test A 24470 2448
1_7 test A 22580 2259
2_2 test B 7960 797
2_3 test B 19540 1955
2_4 test B 7500 751
2_7 test B 2290 230
3_1 test C 5140 515
3_2 test C 16360 1637
"""


class FemtoFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SplitEntry:
    split: str
    condition: str
    failure_time: float
    n_obs: int

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"unknown split {self.split!r}")
        if self.condition not in CONDITIONS:
            raise ValueError(f"unknown loading condition {self.condition!r}")


def default_split():
    """The published 8 / 9 train / test assignment as ``{id: SplitEntry}``."""
    table = {}
    for line in _SPLIT_ROWS.strip().splitlines():
        exp_id, split, cond, failure, count = line.split()
        table[exp_id] = SplitEntry(split, cond, float(failure), int(count))
    return table


def find_experiment_dir(root, exp_id):
    for name in (exp_id, f"Bearing{exp_id}"):
        d = Path(root) / name
        if d.is_dir():
            return d
    raise FileNotFoundError(f"experiment {exp_id} not found under {root}")


def segment_files(directory):
    files = sorted(p for p in Path(directory).iterdir() if p.is_file() and p.name.startswith("acc"))
    if not files:
        raise FemtoFormatError(f"{directory}: no acc* segment files")
    return files


_SPLITTER = re.compile(r"[,;\s]+")


def _parse_rows(path):
    """Slow line-by-line parse that reports the first malformed row."""
    rows, width = [], None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = [f for f in _SPLITTER.split(line) if f]
            try:
                values = [float(f) for f in fields]
            except ValueError:
                raise FemtoFormatError(f"{path}:{lineno}: non-numeric field in {line!r}") from None
            if len(values) < 2:
                raise FemtoFormatError(f"{path}:{lineno}: expected at least 2 columns, got {len(values)}")
            if width is not None and len(values) != width:
                raise FemtoFormatError(f"{path}:{lineno}: expected {width} columns, got {len(values)}")
            width = len(values)
            rows.append(values)
    if not rows:
        raise FemtoFormatError(f"{path}: empty segment file")
    return np.asarray(rows)


def read_segment(path, segment_length=SEGMENT_LENGTH):
    """Returns ``(accelerations [2, L], clock_seconds or None)`` for one file."""
    text = Path(path).read_text()
    delimiter = ";" if ";" in text.split("\n", 1)[0] else ","
    try:
        table = np.loadtxt(text.splitlines(), delimiter=delimiter, ndmin=2)
    except ValueError:
        table = _parse_rows(path)
    if table.shape[1] < 2:
        raise FemtoFormatError(f"{path}: expected at least 2 columns, got {table.shape[1]}")
    if table.shape[0] != segment_length:
        raise FemtoFormatError(f"{path}: segment has {table.shape[0]} rows, expected {segment_length}")
    if not np.all(np.isfinite(table)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(table), axis=1))[0]) + 1
        raise FemtoFormatError(f"{path}:{bad}: non-finite value")
    clock = None
    if table.shape[1] >= 6:
        h, m, s, us = table[0, -6:-2]
        clock = 3600.0 * h + 60.0 * m + s + 1e-6 * us
    return table[:, -2:].T.copy(), clock


def clock_timestamps(clocks):
    """Seconds since the first segment, unwrapping midnight roll-overs."""
    t = np.asarray(clocks, dtype=np.float64)
    step = np.diff(t)
    step[step < 0] += 86400.0
    return np.concatenate([[0.0], np.cumsum(step)])


def load_experiment_dir(directory, exp_id, entry, spacing=SPACING, segment_length=SEGMENT_LENGTH,
                        strict=True, use_file_clock=False, threads=1):
    files = segment_files(directory)
    n = len(files)
    if n != entry.n_obs:
        msg = f"{exp_id}: found {n} segments, expected {entry.n_obs}"
        if strict or abs(n - entry.n_obs) > COUNT_SLACK:
            raise FemtoFormatError(msg)
        log.warning("%s (within the non-strict tolerance of %d)", msg, COUNT_SLACK)

    def parse(path):
        return read_segment(path, segment_length)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parsed = list(pool.map(parse, files))
    else:
        parsed = [parse(p) for p in files]
    segments = np.stack([seg for seg, _ in parsed])
    clocks = [clock for _, clock in parsed]
    if use_file_clock and all(c is not None for c in clocks):
        times = clock_timestamps(clocks)
        if np.any(np.diff(times) <= 0):
            raise FemtoFormatError(f"{exp_id}: in-file clocks are not strictly increasing")
    else:
        times = np.arange(n) * float(spacing)
    if times[-1] > entry.failure_time:
        raise FemtoFormatError(
            f"{exp_id}: last observation at {times[-1]:g} s is after the failure time {entry.failure_time:g} s")
    return Experiment(exp_id, entry.condition, times, segments, entry.failure_time, split=entry.split)


def load_femto(root, split=None, spacing=SPACING, segment_length=SEGMENT_LENGTH, strict=True,
               use_file_clock=False, threads=1):
    """Load every experiment of ``split`` under ``root``; returns ``(train, test)``."""
    split = default_split() if split is None else split
    train, test = [], []
    for exp_id, entry in split.items():
        exp = load_experiment_dir(find_experiment_dir(root, exp_id), exp_id, entry, spacing=spacing,
                                  segment_length=segment_length, strict=strict,
                                  use_file_clock=use_file_clock, threads=threads)
        (train if entry.split == "train" else test).append(exp)
        log.info("%s: %d observations, failure at %g s", exp_id, exp.n_obs, exp.failure_time)
    return train, test


def ingest_femto(root, out, **kwargs):
    """Load the raw recordings and re-serialize them in the dataset layout."""
    train, test = load_femto(root, **kwargs)
    save_dataset(train, test, out)
    return train, test
