"""Optimization loop, evaluation reports and the constant-Gamma reference.

Training minimizes the batch-mean Gamma negative log-likelihood of RUL
targets expressed in units of ``ModelConfig.time_scale``. Reports are written
back in seconds: ``beta`` is a rate per second and ``nll`` is the negative log
density of the RUL measured in seconds.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gradcore as gc
from .gradcore import NumericError
from .models import FORWARD, Parameters, init_params, normalize_kind
from .prob import GammaParams, gamma_log_pdf, gamma_quantile, nll_terms
from .sampler import epoch_past_count, eval_graphs, sample_training_graph

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "lr", "train_nll", "val_nll", "n_past")
REPORT_COLUMNS = ("exp_id", "timestamp", "alpha", "beta", "mean", "q05", "q50", "q95", "true_rul", "nll")


class TrainingAborted(RuntimeError):
    """Raised on a non-finite loss or gradient; carries the last good parameters."""

    def __init__(self, message, params=None, history=None):
        super().__init__(message)
        self.params = params
        self.history = history or []


@dataclass
class TrainConfig:
    lr: float = 1e-3
    burn_in: int = 10
    decay: float = 0.99
    decay_after: int = 40
    max_epochs: int = 300
    patience: int = 50
    val_fraction: float = 0.2
    batch_size: int = 32
    samples_per_experiment: int = 64
    clip_norm: float | None = 10.0
    selection: str = "schedule"
    selection_per_experiment: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.patience < 1 or self.max_epochs < 1:
            raise ValueError("patience and max_epochs must be >= 1")
        if self.batch_size < 1 or self.samples_per_experiment < 1:
            raise ValueError("batch_size and samples_per_experiment must be >= 1")
        if self.burn_in < 0 or self.decay_after < 0 or not 0 < self.decay <= 1:
            raise ValueError("invalid learning-rate schedule")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive (or None to disable)")
        if self.selection not in ("schedule", "epoch"):
            raise ValueError("selection must be 'schedule' or 'epoch'")
        if self.selection_per_experiment < 1:
            raise ValueError("selection_per_experiment must be >= 1")


def lr_at(epoch, cfg):
    """Linear warm-up to the base rate, a plateau, then geometric decay."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if epoch < cfg.burn_in:
        return cfg.lr * (epoch + 1) / cfg.burn_in
    if epoch <= cfg.decay_after:
        return cfg.lr
    return cfg.lr * cfg.decay ** (epoch - cfg.decay_after)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params, grads, state, lr):
    """Bias-corrected Adam update applied in place to ``params[name].data``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} {params[name].shape}")
    state.step += 1
    t = state.step
    for name, g in grads.items():
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        params[name].data = params[name].data - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def _grads(params):
    # parameters outside the graph (e.g. edge encoders on edgeless samples) get zero gradient
    return {k: p.grad if p.grad is not None else np.zeros_like(p.data) for k, p in params.items()}


def clip_by_global_norm(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def batch_loss(forward, samples, params, model_cfg, training=False, rng=None):
    """Mean NLL of normalized targets over ``samples`` (scalar tensor)."""
    gamma = forward(samples, params, model_cfg, training, rng)
    y = np.array([s.target for s in samples]) / model_cfg.time_scale
    return nll_terms(gamma, y).mean()


def _batches(items, size):
    for start in range(0, len(items), size):
        yield items[start:start + size]


def _mean_nll(forward, samples, params, model_cfg, batch_size):
    total = 0.0
    for chunk in _batches(samples, batch_size):
        total += batch_loss(forward, chunk, params, model_cfg).item() * len(chunk)
    return total / len(samples)


def draw_epoch_samples(train_set, sampler_cfg, train_cfg, epoch):
    """Samples for one epoch, shuffled and split into (train, validation)."""
    n_past = epoch_past_count(epoch, sampler_cfg)
    rng = np.random.default_rng([train_cfg.seed, epoch, 0])
    samples = [
        sample_training_graph(exp, sampler_cfg, n_past, rng)
        for exp in train_set
        for _ in range(train_cfg.samples_per_experiment)
    ]
    order = rng.permutation(len(samples))
    samples = [samples[i] for i in order]
    n_val = max(1, int(round(train_cfg.val_fraction * len(samples))))
    if n_val >= len(samples):
        raise ValueError("validation split leaves no training samples; draw more samples per experiment")
    return samples[n_val:], samples[:n_val], n_past


def selection_pool(train_set, sampler_cfg, train_cfg):
    """Fixed validation graphs covering every past-count of the schedule.

    NLLs of epochs with different past-counts are not comparable, so
    checkpoint selection scores every epoch on this one pool instead.
    """
    rng = np.random.default_rng([train_cfg.seed, 10**6])
    return [
        sample_training_graph(exp, sampler_cfg, n_past, rng)
        for n_past in sorted(set(sampler_cfg.schedule))
        for exp in train_set
        for _ in range(train_cfg.selection_per_experiment)
    ]


@dataclass
class TrainResult:
    params: Parameters
    history: list
    best_epoch: int
    best_val_nll: float
    selection_nll: list = field(default_factory=list)


def train(kind, train_set, model_cfg, train_cfg, sampler_cfg, params=None, on_epoch=None):
    """Fit ``kind`` to ``train_set``; returns the parameters with the best selection score."""
    kind = normalize_kind(kind)
    if kind != model_cfg.kind:
        raise ValueError(f"model kind {kind!r} does not match configuration kind {model_cfg.kind!r}")
    if not train_set:
        raise ValueError("training set is empty")
    forward = FORWARD[kind]
    params = params if params is not None else init_params(model_cfg, np.random.default_rng([train_cfg.seed, 7]))
    state = AdamState()
    history, scores = [], []
    best = (math.inf, -1, params.arrays())
    pool = selection_pool(train_set, sampler_cfg, train_cfg) if train_cfg.selection == "schedule" else None
    eval_batch = max(train_cfg.batch_size, 64)

    for epoch in range(train_cfg.max_epochs):
        lr = lr_at(epoch, train_cfg)
        train_samples, val_samples, n_past = draw_epoch_samples(train_set, sampler_cfg, train_cfg, epoch)
        dropout_rng = np.random.default_rng([train_cfg.seed, epoch, 1])
        losses = []
        for chunk in _batches(train_samples, train_cfg.batch_size):
            params.zero_grad()
            try:
                loss = batch_loss(forward, chunk, params, model_cfg, training=True, rng=dropout_rng)
                value = loss.item()
                gc.backward(loss)
                grads, _ = clip_by_global_norm(_grads(params), train_cfg.clip_norm)
                adam_step(params, grads, state, lr)
            except (NumericError, FloatingPointError) as err:
                good = Parameters.from_arrays(best[2])
                raise TrainingAborted(f"epoch {epoch}: {err}", good, history) from err
            losses.append(value * len(chunk))
        train_nll = sum(losses) / len(train_samples)
        val_nll = _mean_nll(forward, val_samples, params, model_cfg, eval_batch)
        score = val_nll if pool is None else _mean_nll(forward, pool, params, model_cfg, eval_batch)
        if not all(math.isfinite(x) for x in (train_nll, val_nll, score)):
            raise TrainingAborted(f"epoch {epoch}: non-finite loss", Parameters.from_arrays(best[2]), history)
        row = {"epoch": epoch, "lr": lr, "train_nll": train_nll, "val_nll": val_nll, "n_past": n_past}
        history.append(row)
        scores.append(score)
        log.info("epoch %d lr %.3g n_past %d train %.4f val %.4f select %.4f",
                 epoch, lr, n_past, train_nll, val_nll, score)
        if on_epoch is not None:
            on_epoch(row, params)
        if score < best[0]:
            best = (score, epoch, params.arrays())
        elif epoch - best[1] >= train_cfg.patience:
            log.info("early stop at epoch %d (best %d)", epoch, best[1])
            break

    return TrainResult(Parameters.from_arrays(best[2]), history, best[1], best[0], scores)


# ---------------------------------------------------------------- evaluation

@dataclass
class Report:
    rows: list
    per_experiment: dict
    aggregate_nll: float
    n_past: int


def _predict(forward, samples, params, model_cfg, batch_size):
    alphas, betas = [], []
    for chunk in _batches(samples, batch_size):
        g = forward(chunk, params, model_cfg, False, None)
        alphas.append(np.atleast_1d(g.alpha_values))
        betas.append(np.atleast_1d(g.beta_values))
    return np.concatenate(alphas), np.concatenate(betas) / model_cfg.time_scale


def report_rows(exp_id, timestamps, alpha, beta, true_rul):
    """Per-anchor rows for Gamma predictions already expressed in seconds."""
    p = GammaParams(np.asarray(alpha, dtype=float), np.asarray(beta, dtype=float))
    q = {name: gamma_quantile(p, level) for name, level in (("q05", 0.05), ("q50", 0.5), ("q95", 0.95))}
    nll = -gamma_log_pdf(p, true_rul)
    return [
        {
            "exp_id": exp_id,
            "timestamp": float(timestamps[i]),
            "alpha": float(p.alpha_values[i]),
            "beta": float(p.beta_values[i]),
            "mean": float(p.alpha_values[i] / p.beta_values[i]),
            "q05": float(q["q05"][i]),
            "q50": float(q["q50"][i]),
            "q95": float(q["q95"][i]),
            "true_rul": float(true_rul[i]),
            "nll": float(nll[i]),
        }
        for i in range(len(timestamps))
    ]


def summarize(rows, n_past):
    per_exp = {}
    for r in rows:
        per_exp.setdefault(r["exp_id"], []).append(r["nll"])
    per_exp = {k: float(np.mean(v)) for k, v in per_exp.items()}
    aggregate = float(np.mean([r["nll"] for r in rows])) if rows else math.nan
    return Report(rows, per_exp, aggregate, n_past)


def evaluate(params, dataset, model_cfg, sampler_cfg, n_past=None, batch_size=64, threads=1):
    """Predict at every pre-failure observation of every experiment."""
    forward = FORWARD[model_cfg.kind]
    n_past = sampler_cfg.eval_past if n_past is None else n_past

    def one(exp):
        samples = eval_graphs(exp, sampler_cfg, n_past=n_past)
        if not samples:
            return []
        alpha, beta = _predict(forward, samples, params, model_cfg, batch_size)
        times = np.array([s.node_times[s.readout] for s in samples])
        return report_rows(exp.exp_id, times, alpha, beta, np.array([s.target for s in samples]))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(one, dataset))
    else:
        chunks = [one(exp) for exp in dataset]
    return summarize([r for chunk in chunks for r in chunk], n_past)


def constant_gamma_baseline(train_set):
    """Method-of-moments Gamma fit to every positive training RUL label."""
    y = np.concatenate([exp.rul[exp.rul > 0] for exp in train_set])
    if y.size < 2:
        raise ValueError("need at least two positive RUL labels")
    mean, var = float(y.mean()), float(y.var())
    if var <= 0:
        raise ValueError("RUL labels have zero variance; a constant Gamma fit is degenerate")
    return GammaParams(mean * mean / var, mean / var)


def evaluate_constant(gamma, dataset):
    rows = []
    for exp in dataset:
        keep = exp.rul > 0
        n = int(keep.sum())
        rows += report_rows(exp.exp_id, exp.timestamps[keep], np.full(n, gamma.alpha_values),
                            np.full(n, gamma.beta_values), exp.rul[keep])
    return summarize(rows, 0)


# ---------------------------------------------------------------- CSV output

def _fmt(value):
    return repr(float(value)) if isinstance(value, float) else str(value)


def write_csv(path, columns, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def write_history(path, history):
    write_csv(path, HISTORY_COLUMNS, history)


def write_report(path, report):
    write_csv(path, REPORT_COLUMNS, report.rows)


def read_report(path):
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise ValueError(f"{path}: unexpected report columns {reader.fieldnames}")
        rows = []
        for r in reader:
            rows.append({k: (r[k] if k == "exp_id" else float(r[k])) for k in REPORT_COLUMNS})
    return rows
