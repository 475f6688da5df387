"""Gamma predictive distribution (shape ``alpha``, rate ``beta``).

Density, negative log-likelihood objective, moments, quantiles and sampling.
The NLL is assembled from tape primitives, so its gradient with respect to
``alpha`` and ``beta`` is ordinary reverse-mode differentiation of the
log-density: ``psi(alpha) - ln(beta) - ln(y)`` and ``y - alpha / beta``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import gradcore as gc
from .gradcore import DomainError, Tensor
from .gradcore.special import digamma, gammainc, lgamma


@dataclass(frozen=True)
class GammaParams:
    """Shape ``alpha`` (dimensionless) and rate ``beta`` (1 / time unit).

    Either field may be a float, an array or a :class:`Tensor` (batched
    predictions keep both as ``[B]`` tensors so gradients flow through).
    """

    alpha: object
    beta: object

    def __post_init__(self):
        for name in ("alpha", "beta"):
            arr = np.asarray(_values(getattr(self, name)), dtype=np.float64)
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise DomainError(f"Gamma {name} must be finite and strictly positive")

    @property
    def alpha_values(self):
        return np.asarray(_values(self.alpha), dtype=np.float64)

    @property
    def beta_values(self):
        return np.asarray(_values(self.beta), dtype=np.float64)

    def detach(self):
        return GammaParams(self.alpha_values, self.beta_values)


class GammaStats(NamedTuple):
    mean: object
    variance: object
    mode: object


def _values(x):
    return x.data if isinstance(x, Tensor) else x


def _positive(y, what="y"):
    y = np.asarray(_values(y), dtype=np.float64)
    if np.any(~np.isfinite(y)) or np.any(y <= 0):
        raise DomainError(f"{what} must be strictly positive")
    return y


def gamma_log_pdf(p, y):
    """``alpha ln(beta) - lnGamma(alpha) + (alpha - 1) ln(y) - beta y``."""
    y = _positive(y)
    a, b = p.alpha_values, p.beta_values
    out = a * np.log(b) - lgamma(a) + (a - 1.0) * np.log(y) - b * y
    return float(out) if np.ndim(out) == 0 else out


def _stack(params_batch):
    if isinstance(params_batch, GammaParams):
        return gc.as_tensor(params_batch.alpha).reshape(-1), gc.as_tensor(params_batch.beta).reshape(-1)
    alphas = [gc.as_tensor(p.alpha).reshape(-1) for p in params_batch]
    betas = [gc.as_tensor(p.beta).reshape(-1) for p in params_batch]
    if not alphas:
        raise ValueError("nll_loss needs at least one prediction")
    return gc.concat(alphas), gc.concat(betas)


def nll_terms(params_batch, y_batch):
    """Per-item negative log-likelihood as a ``[B]`` tensor."""
    alpha, beta = _stack(params_batch)
    y = _positive(y_batch).reshape(-1)
    if y.shape[0] != alpha.shape[0]:
        raise gc.DimensionError(f"{alpha.shape[0]} predictions for {y.shape[0]} targets")
    log_y = np.log(y)
    log_pdf = alpha * gc.log(beta) - gc.lgamma(alpha) + (alpha - 1.0) * log_y - beta * y
    return -log_pdf


def nll_loss(params_batch, y_batch):
    """Summed negative log-likelihood over a batch (scalar tensor)."""
    return nll_terms(params_batch, y_batch).sum()


def nll_grad(p, y):
    """Closed-form d(nll)/d(alpha), d(nll)/d(beta) for one observation."""
    a, b = p.alpha_values, p.beta_values
    y = _positive(y)
    return digamma(a) - np.log(b) - np.log(y), y - a / b


def gamma_stats(p):
    a, b = p.alpha_values, p.beta_values
    mean = a / b
    var = a / (b * b)
    if np.ndim(a) == 0:
        mode = (a - 1.0) / b if a > 1.0 else None
        return GammaStats(float(mean), float(var), None if mode is None else float(mode))
    mode = np.where(a > 1.0, (a - 1.0) / b, np.nan)
    return GammaStats(mean, var, mode)


def gamma_cdf(p, y):
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0):
        raise DomainError("Gamma CDF needs y >= 0")
    return gammainc(p.alpha_values, p.beta_values * y)


def gamma_quantile(p, q, rtol=1e-10, max_iter=400):
    """Inverse CDF by bracketing then bisection to relative width ``rtol``."""
    q_arr = np.asarray(q, dtype=np.float64)
    if np.any((q_arr <= 0) | (q_arr >= 1)):
        raise DomainError("quantile level must lie in (0, 1)")
    a, b = np.broadcast_arrays(p.alpha_values, p.beta_values)
    a, b, q_b = np.broadcast_arrays(a, b, q_arr)
    scalar = a.ndim == 0
    a, b, q_b = (np.atleast_1d(x).astype(np.float64) for x in (a, b, q_b))

    def cdf(x):
        return gammainc(a, b * x)

    lo = np.zeros_like(a)
    hi = np.maximum(a / b, 1e-300) * 2.0
    for _ in range(2000):
        short = cdf(hi) < q_b
        if not np.any(short):
            break
        lo = np.where(short, hi, lo)
        hi = np.where(short, hi * 2.0, hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        below = cdf(mid) < q_b
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= rtol * hi):
            break
    out = 0.5 * (lo + hi)
    return float(out[0]) if scalar else out


def gamma_sample(p, rng, size=None):
    """Marsaglia-Tsang squeeze sampler; shapes below 1 use the boost
    ``Gamma(alpha) = Gamma(alpha + 1) * U**(1/alpha)``."""
    a = p.alpha_values
    b = p.beta_values
    shape = np.broadcast_shapes(np.shape(a), np.shape(b)) if size is None else tuple(np.atleast_1d(size))
    a = np.broadcast_to(a, shape).astype(np.float64).reshape(-1)
    b = np.broadcast_to(b, shape).astype(np.float64).reshape(-1)
    boost = a < 1.0
    a_eff = np.where(boost, a + 1.0, a)
    d = a_eff - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty_like(a_eff)
    pending = np.arange(a_eff.size)
    while pending.size:
        x = rng.standard_normal(pending.size)
        u = rng.random(pending.size)
        v = (1.0 + c[pending] * x) ** 3
        ok = v > 0
        v_safe = np.where(ok, v, 1.0)
        squeeze = u < 1.0 - 0.0331 * x ** 4
        full = np.log(np.maximum(u, 1e-300)) < 0.5 * x * x + d[pending] * (1.0 - v_safe + np.log(v_safe))
        accept = ok & (squeeze | full)
        out[pending[accept]] = d[pending[accept]] * v_safe[accept]
        pending = pending[~accept]
    if np.any(boost):
        u = rng.random(int(boost.sum()))
        out[boost] *= u ** (1.0 / a[boost])
    # shapes near 0.02 can underflow; keep the support strictly positive
    out = np.maximum(out / b, np.finfo(np.float64).tiny)
    return float(out[0]) if shape == () else out.reshape(shape)
