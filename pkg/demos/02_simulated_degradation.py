"""
Simulated run-to-failure experiments
====================================

Latent damage accumulates through Gamma increments whose shape grows with
time. Each step emits a raw segment whose spikes grow with the damage.
Writes ``demo_out/latent_paths.svg`` and ``demo_out/segments.svg``.
"""

from pathlib import Path

import matplotlib

matplotlib.use("svg")
import matplotlib.pyplot as plt
import numpy as np

from gnrul.simdata import SimProcessConfig, generate_dataset

out = Path("demo_out")
out.mkdir(exist_ok=True)

# A small horizon and short segments keep this quick.
cfg = SimProcessConfig(n_steps=300, segment_length=256, seed=0)
train, test, z_f = generate_dataset(cfg)
print(f"threshold z_f = {z_f:.3f}; {len(train)} training and {len(test)} test experiments")
for exp in train[:3] + test:
    print(f"  {exp.exp_id} ({exp.split}, {exp.condition}): {exp.n_obs} observations, fails at {exp.failure_time:g} s")

# The latent paths: every experiment stops the step before it crosses z_f.
fig, ax = plt.subplots(figsize=(6, 4))
for exp in train + test:
    ax.plot(exp.timestamps, exp.latent, lw=1, color="C1" if exp.split == "test" else "C0")
ax.axhline(z_f, color="k", ls="--", lw=1)
ax.set_xlabel("time [s]")
ax.set_ylabel("latent damage")
fig.savefig(out / "latent_paths.svg", metadata={"Date": None})

# Raw observations early and late in one experiment: the spikes grow.
exp = train[0]
fig, axes = plt.subplots(2, 1, figsize=(6, 4), sharex=True, sharey=True)
for ax, idx in zip(axes, (0, exp.n_obs - 1)):
    ax.plot(exp.segments[idx, 0], lw=0.7)
    ax.set_title(f"t = {exp.timestamps[idx]:g} s, latent {exp.latent[idx]:.2f}")
fig.tight_layout()
fig.savefig(out / "segments.svg", metadata={"Date": None})

amplitude = np.abs(exp.segments).max(axis=(1, 2))
print("peak amplitude, first vs last observation:", amplitude[0].round(2), amplitude[-1].round(2))
