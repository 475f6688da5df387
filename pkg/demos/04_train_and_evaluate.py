"""
Training and evaluating on simulated data
=========================================

Trains the GNN-tCNN on a desk-scale simulated dataset and compares the test
NLL for predictions from a single observation and from ten observations
against a constant Gamma fitted to the training labels.

The default run is a short smoke version (a few minutes). Pass ``--full``
for the 60-epoch desk-scale setting used by the acceptance tests.
"""

import sys

import numpy as np

from gnrul.models import ModelConfig
from gnrul.sampler import SamplerConfig
from gnrul.simdata import SimProcessConfig, generate_dataset
from gnrul.trainer import TrainConfig, constant_gamma_baseline, evaluate, evaluate_constant, train

full = "--full" in sys.argv
sim = SimProcessConfig(n_steps=300, segment_length=256, seed=0)
train_set, test_set, _ = generate_dataset(sim)

model_cfg = ModelConfig(segment_length=256, time_scale=sim.horizon)
sampler_cfg = SamplerConfig()
train_cfg = TrainConfig(max_epochs=60 if full else 8, samples_per_experiment=128 if full else 32, seed=0)


def progress(row, _params):
    print(f"epoch {row['epoch']:2d}  n_past {row['n_past']:2d}  lr {row['lr']:.2e}  "
          f"train {row['train_nll']:.3f}  val {row['val_nll']:.3f}")


result = train("gnn_tcnn", train_set, model_cfg, train_cfg, sampler_cfg, on_epoch=progress)
print(f"selected epoch {result.best_epoch}")

const = evaluate_constant(constant_gamma_baseline(train_set), test_set)
print(f"\nconstant Gamma       test NLL {const.aggregate_nll:.4f}")
reports = {}
for n_past in (1, 10):
    reports[n_past] = evaluate(result.params, test_set, model_cfg, sampler_cfg, n_past=n_past)
    print(f"GNN-tCNN, n_past={n_past:<3d} test NLL {reports[n_past].aggregate_nll:.4f}")

# Predictive spread early and late in life.
for exp in test_set:
    rows = [r for r in reports[10].rows if r["exp_id"] == exp.exp_id]
    sd = np.array([np.sqrt(r["alpha"]) / r["beta"] for r in rows])
    k = max(1, len(rows) // 10)
    print(f"{exp.exp_id}: predictive sd {sd[:k].mean():.0f} s early, {sd[-k:].mean():.0f} s late")
