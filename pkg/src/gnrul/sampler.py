"""Causal observation graphs sampled from run-to-failure experiments.

A sample is anchored at one observation (the readout node) and adds up to
``n_past - 1`` earlier observations from a trailing time window, greedily
rejecting candidates that fall closer than ``min_spacing`` to an observation
already chosen. Every earlier node sends an edge to every later node, with
the elapsed time as the edge attribute.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .graphnet import AttributedGraph


@dataclass
class SamplerConfig:
    window: float = 2000.0
    min_spacing: float = 100.0
    schedule: tuple = (1, 2, 5, 10)
    eval_past: int = 30
    self_edges: bool = False
    seed: int = 0

    def __post_init__(self):
        self.schedule = tuple(int(n) for n in self.schedule)
        if not self.window > self.min_spacing > 0:
            raise ValueError("need window > min_spacing > 0")
        if not self.schedule or min(self.schedule) < 1:
            raise ValueError("schedule must be nonempty with entries >= 1")
        if self.eval_past < 1:
            raise ValueError("eval_past must be >= 1")


@dataclass
class CausalSample:
    graph: AttributedGraph
    node_times: np.ndarray
    target: float
    exp_id: str
    readout: int

    @property
    def n_nodes(self):
        return self.graph.n_nodes


def build_causal_graph(times, segments, self_edges=False):
    """Complete forward-in-time DAG: an edge i -> j for every i < j."""
    times = np.asarray(times, dtype=np.float64)
    if np.any(np.diff(times) <= 0):
        raise ValueError("observation times must be strictly increasing (no duplicates)")
    n = times.shape[0]
    senders, receivers = np.triu_indices(n, k=1)
    if self_edges:
        diag = np.arange(n)
        senders = np.concatenate([senders, diag])
        receivers = np.concatenate([receivers, diag])
    dt = (times[receivers] - times[senders])[:, None]
    return AttributedGraph(np.asarray(segments, dtype=np.float64), dt, senders, receivers)


def valid_anchors(exp):
    """Indices of observations with strictly positive remaining life."""
    return np.flatnonzero(exp.failure_time - exp.timestamps > 0)


def select_past(times, anchor, n_past, cfg, rng):
    """Indices of up to ``n_past - 1`` past observations for ``anchor``."""
    t_last = times[anchor]
    lo = np.searchsorted(times, t_last - cfg.window, side="left")
    candidates = np.arange(lo, anchor)
    chosen = [anchor]
    if n_past <= 1 or candidates.size == 0:
        return []
    picked = []
    for idx in rng.permutation(candidates):
        t = times[idx]
        if all(abs(t - times[c]) >= cfg.min_spacing for c in chosen):
            chosen.append(idx)
            picked.append(int(idx))
            if len(picked) >= n_past - 1:
                break
    return sorted(picked)


def make_sample(exp, anchor, past, cfg):
    idx = np.array(sorted(past) + [int(anchor)], dtype=np.int64)
    times = exp.timestamps[idx]
    graph = build_causal_graph(times, exp.segments[idx], self_edges=cfg.self_edges)
    return CausalSample(
        graph=graph,
        node_times=times,
        target=float(exp.failure_time - exp.timestamps[anchor]),
        exp_id=exp.exp_id,
        readout=len(idx) - 1,
    )


def sample_training_graph(exp, cfg, n_past, rng):
    anchors = valid_anchors(exp)
    if anchors.size == 0:
        raise ValueError(f"{exp.exp_id} has no pre-failure observations")
    anchor = int(anchors[rng.integers(anchors.size)])
    return make_sample(exp, anchor, select_past(exp.timestamps, anchor, n_past, cfg, rng), cfg)


def epoch_past_count(epoch, cfg):
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.schedule[epoch % len(cfg.schedule)]


def anchor_rng(seed, exp_id, anchor):
    return np.random.default_rng([int(seed), zlib.crc32(exp_id.encode("utf-8")), int(anchor)])


def eval_graphs(exp, cfg, n_past=None, seed=None):
    """One sample per pre-failure observation, in timestamp order."""
    n_past = cfg.eval_past if n_past is None else n_past
    seed = cfg.seed if seed is None else seed
    out = []
    for anchor in valid_anchors(exp):
        rng = anchor_rng(seed, exp.exp_id, anchor)
        out.append(make_sample(exp, anchor, select_past(exp.timestamps, anchor, n_past, cfg, rng), cfg))
    return out
