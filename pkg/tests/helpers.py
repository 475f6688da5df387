import numpy as np

from gnrul import gradcore as gc
from gnrul.experiments import Experiment
from gnrul.prob import nll_loss


def toy_experiment(rng, n_obs=60, spacing=50.0, length=32, channels=1, exp_id="toy", tail=30.0):
    times = np.arange(n_obs) * spacing
    return Experiment(exp_id, "toy", times, rng.normal(size=(n_obs, channels, length)),
                      times[-1] + tail)


def directional_fd_check(loss_fn, params, rng, n_dirs=2, n_coords=6, h=1e-5, rtol=1e-3, atol=1e-8):
    """Compare tape gradients of ``loss_fn(params)`` against central differences.

    For every parameter tensor: ``n_dirs`` random directional derivatives and
    ``n_coords`` randomly chosen individual coordinates.
    """
    params.zero_grad()
    gc.backward(loss_fn(params))
    grads = {k: v.grad.copy() for k, v in params.items()}

    def value():
        return loss_fn(params).item()

    failures = []
    for name, p in params.items():
        base = p.data.copy()
        flat = p.data.reshape(-1)
        for _ in range(n_dirs):
            u = rng.normal(size=p.shape)
            p.data = base + h * u
            up = value()
            p.data = base - h * u
            down = value()
            p.data = base.copy()
            fd = (up - down) / (2 * h)
            an = float(np.sum(grads[name] * u))
            if not np.isclose(an, fd, rtol=rtol, atol=atol):
                failures.append((name, "dir", an, fd))
        for idx in rng.choice(flat.size, size=min(n_coords, flat.size), replace=False):
            pert = base.copy().reshape(-1)
            pert[idx] += h
            p.data = pert.reshape(p.shape)
            up = value()
            pert[idx] -= 2 * h
            p.data = pert.reshape(p.shape)
            down = value()
            p.data = base.copy()
            fd = (up - down) / (2 * h)
            an = float(grads[name].reshape(-1)[idx])
            if not np.isclose(an, fd, rtol=rtol, atol=atol):
                failures.append((name, int(idx), an, fd))
    return failures


def sample_nll(forward, samples, cfg):
    def loss(params):
        g = forward(samples, params, cfg, training=False)
        return nll_loss(g, [s.target / cfg.time_scale for s in samples])

    return loss


def write_femto_fixture(root, exp_id, n_segments, length=2556, rng=None, delimiter=",", clock=True,
                        dirname=None, start=(9, 39, 39.0), spacing=10.0, temperature=True):
    """Write ``n_segments`` acc_*.csv files in the bearing-recording format."""
    from pathlib import Path

    rng = rng or np.random.default_rng(0)
    d = Path(root) / (dirname or f"Bearing{exp_id}")
    d.mkdir(parents=True, exist_ok=True)
    t0 = start[0] * 3600 + start[1] * 60 + start[2]
    for k in range(n_segments):
        acc = rng.normal(size=(length, 2)).round(3)
        if clock:
            t = (t0 + k * spacing) % 86400
            h, rem = divmod(t, 3600)
            m, s = divmod(rem, 60)
            us = np.arange(length) * 39.1
            cols = np.column_stack([np.full(length, h), np.full(length, m), np.full(length, int(s)),
                                    (s - int(s)) * 1e6 + us, acc])
            fmt = ["%d", "%d", "%d", "%.1f", "%.3f", "%.3f"]
        else:
            cols, fmt = acc, ["%.3f", "%.3f"]
        np.savetxt(d / f"acc_{k + 1:05d}.csv", cols, fmt=fmt, delimiter=delimiter)
        if temperature and k % 6 == 0:
            (d / f"temp_{k // 6 + 1:05d}.csv").write_text("9,39,39,0.0,50.0\n")
    return d
