"""Simulated non-stationary degradation with spiky raw observations.

The latent damage is a cumulative sum of Gamma increments whose shape grows
with normalized time, ``alpha(t, c) = 0.02 + t**c``, with a per-experiment
exponent ``c`` drawn from a Gaussian. Failure occurs at the first step where
the damage reaches the threshold ``z_f``. Each pre-failure step emits one
raw segment: Gaussian baseline noise plus ``K`` randomly placed spikes whose
magnitude grows quadratically with the noisy latent value.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np

from .experiments import Experiment
from .prob import GammaParams, gamma_sample

log = logging.getLogger(__name__)

PILOT_STREAM = 10**6


@dataclass
class SimProcessConfig:
    n_steps: int = 1000
    step_seconds: float = 10.0
    rate: float = 50.0
    z_f: float | None = None
    c_mean: float = 1.0
    c_std: float = 0.15
    latent_noise_rel: float = 0.02
    obs_noise: float = 0.1
    segment_length: int = 1000
    n_spikes: int = 20
    spike_a0: float = 0.5
    spike_a1: float = 2.0
    n_train: int = 12
    n_test: int = 3
    n_pilot: int = 500
    pilot_fraction: float = 0.55
    max_regenerations: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.n_steps < 2 or self.segment_length < 1:
            raise ValueError("n_steps must be >= 2 and segment_length >= 1")
        if self.rate <= 0 or (self.z_f is not None and self.z_f <= 0):
            raise ValueError("rate and z_f must be positive")
        if min(self.c_std, self.latent_noise_rel, self.obs_noise) < 0:
            raise ValueError("standard deviations must be non-negative")
        if not 0 <= self.n_spikes <= self.segment_length:
            raise ValueError("n_spikes must lie in [0, segment_length]")

    @property
    def horizon(self):
        """Nominal experiment duration in seconds (the time-normalization constant)."""
        return self.n_steps * self.step_seconds


def shape_schedule(n_steps, c):
    """Increment shape ``0.02 + t**c`` on the normalized grid ``t_i = i / n_steps``."""
    t = np.arange(n_steps) / n_steps
    return 0.02 + t ** c


def simulate_latent(cfg, c, rng, z_f=None):
    """One latent path truncated before failure.

    Returns ``(z, failure_step)`` where ``z[k] < z_f`` for every recorded step
    and ``failure_step = len(z)`` is the first step with ``z >= z_f``, or
    ``(full_path, None)`` when the threshold is never reached.
    """
    if not np.isfinite(c):
        raise ValueError("exponent c must be finite")
    z_f = cfg.z_f if z_f is None else z_f
    increments = gamma_sample(GammaParams(shape_schedule(cfg.n_steps, c), cfg.rate), rng)
    z = np.cumsum(increments)
    if z_f is None:
        return z, None
    crossed = np.flatnonzero(z >= z_f)
    if crossed.size == 0:
        return z, None
    failure = int(crossed[0])
    return z[:failure], failure


def calibrate_threshold(cfg, rng=None):
    """Threshold putting the median failure step near ``pilot_fraction * n_steps``.

    Runs ``n_pilot`` un-thresholded paths and takes the median latent value at
    the target step.
    """
    rng = rng if rng is not None else np.random.default_rng([cfg.seed, PILOT_STREAM])
    step = int(round(cfg.pilot_fraction * cfg.n_steps)) - 1
    values = np.empty(cfg.n_pilot)
    for i in range(cfg.n_pilot):
        c = rng.normal(cfg.c_mean, cfg.c_std)
        z, _ = simulate_latent(cfg, c, rng, z_f=None)
        values[i] = z[step]
    return float(np.median(values))


def emit_segment(z_noisy, cfg, rng):
    """Raw ``[1, L]`` observation for a (noisy) latent value."""
    x = rng.normal(0.0, cfg.obs_noise, cfg.segment_length) if cfg.obs_noise > 0 else np.zeros(cfg.segment_length)
    if cfg.n_spikes:
        where = rng.choice(cfg.segment_length, size=cfg.n_spikes, replace=False)
        sign = rng.choice([-1.0, 1.0], size=cfg.n_spikes)
        x[where] += sign * (cfg.spike_a0 + cfg.spike_a1 * z_noisy ** 2)
    return x[None, :]


def experiment_rng(seed, index):
    return np.random.default_rng([int(seed), int(index)])


def simulate_experiment(cfg, index, z_f, exp_id=None, split="train"):
    """Draw one experiment with its own RNG stream derived from ``(seed, index)``."""
    rng = experiment_rng(cfg.seed, index)
    exp_id = exp_id or f"sim_{index:03d}"
    for attempt in range(cfg.max_regenerations + 1):
        c = rng.normal(cfg.c_mean, cfg.c_std)
        z, failure = simulate_latent(cfg, c, rng, z_f=z_f)
        if failure is not None and failure >= 1:
            break
        log.warning("%s: threshold not reached (attempt %d, c=%.3f); regenerating", exp_id, attempt, c)
    else:
        raise RuntimeError(f"{exp_id}: no failing path after {cfg.max_regenerations} regenerations")
    sigma_z = cfg.latent_noise_rel * z_f
    noisy = z + rng.normal(0.0, sigma_z, z.shape) if sigma_z > 0 else z.copy()
    segments = np.stack([emit_segment(v, cfg, rng) for v in noisy])
    times = np.arange(failure) * cfg.step_seconds
    return Experiment(
        exp_id=exp_id,
        condition=f"c={c:.4f}",
        timestamps=times,
        segments=segments,
        failure_time=failure * cfg.step_seconds,
        split=split,
        latent=z,
    )


def generate_dataset(cfg, n_train=None, n_test=None, threads=1):
    """Returns ``(train, test, z_f)``; ``z_f`` is calibrated when unset in ``cfg``."""
    n_train = cfg.n_train if n_train is None else n_train
    n_test = cfg.n_test if n_test is None else n_test
    z_f = cfg.z_f if cfg.z_f is not None else calibrate_threshold(cfg)
    jobs = [(i, "train" if i < n_train else "test") for i in range(n_train + n_test)]

    def run(job):
        i, split = job
        return simulate_experiment(cfg, i, z_f, split=split)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            exps = list(pool.map(run, jobs))
    else:
        exps = [run(j) for j in jobs]
    return exps[:n_train], exps[n_train:], z_f


def config_from_mapping(values):
    known = {f.name for f in fields(SimProcessConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown simulation keys: {sorted(unknown)}")
    return replace(SimProcessConfig(), **values)
