"""
Causal observation graphs
=========================

A prediction at time t uses a handful of earlier observations from the last
2000 s, at least 100 s apart. Every earlier node sends an edge to every
later node, carrying the elapsed time.
"""

import numpy as np

from gnrul.graphnet import dump_graph
from gnrul.models import ModelConfig, gnn_tcnn_forward, init_params
from gnrul.prob import gamma_stats
from gnrul.sampler import SamplerConfig, build_causal_graph, eval_graphs, sample_training_graph
from gnrul.simdata import SimProcessConfig, generate_dataset

# The smallest example: three observations give three forward-in-time edges.
g = build_causal_graph([0.0, 150.0, 400.0], np.zeros((3, 1, 16)))
print(dump_graph(g, [0.0, 150.0, 400.0]))

cfg = SimProcessConfig(n_steps=300, segment_length=256, n_train=2, n_test=1, seed=1)
train, _, _ = generate_dataset(cfg)
exp = train[0]

# Training samples: a random anchor and up to n_past - 1 earlier observations.
sampler = SamplerConfig()
rng = np.random.default_rng(0)
for n_past in sampler.schedule:
    s = sample_training_graph(exp, sampler, n_past, rng)
    print(f"n_past={n_past:2d}: nodes at {s.node_times.astype(int).tolist()} s, "
          f"{s.graph.n_edges} edges, target RUL {s.target:g} s")

# Evaluation: one sample per observation, with a fixed random stream per anchor.
samples = eval_graphs(exp, sampler, n_past=10)
print(f"\n{len(samples)} evaluation samples for {exp.n_obs} observations")

# An untrained GNN-tCNN already maps every sample to a valid Gamma distribution.
model_cfg = ModelConfig(segment_length=256, time_scale=cfg.horizon)
params = init_params(model_cfg, np.random.default_rng(0))
gamma = gnn_tcnn_forward(samples[::40], params, model_cfg)
stats = gamma_stats(gamma)
print("untrained predictive means (time units):", np.round(stats.mean, 3))
