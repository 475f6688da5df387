"""Special functions used by the Gamma likelihood and its gradients.

All functions are vectorized over numpy arrays and evaluated in float64.
``lgamma`` uses the Lanczos approximation (g=7, 9 terms), ``digamma`` uses
upward recurrence followed by the asymptotic Stirling series, and
``gammainc`` is the regularized lower incomplete gamma function P(a, x)
computed with the power series below ``x < a + 1`` and a Lentz continued
fraction above it.
"""

import numpy as np

_LANCZOS_G = 7.0
_LANCZOS_COEF = np.array([
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
])
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)

# Bernoulli-number coefficients B_2k / (2k) of the digamma asymptotic series.
_DIGAMMA_SERIES = np.array([
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
])
_DIGAMMA_SHIFT = 10.0

_EPS = np.finfo(np.float64).eps
_TINY = 1e-300


def _lgamma_lanczos(x):
    # valid for x >= 0.5
    z = x - 1.0
    acc = np.full_like(z, _LANCZOS_COEF[0])
    for i in range(1, len(_LANCZOS_COEF)):
        acc = acc + _LANCZOS_COEF[i] / (z + i)
    t = z + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (z + 0.5) * np.log(t) - t + np.log(acc)


def lgamma(x):
    """Natural log of |Gamma(x)| for real x that is not a non-positive integer."""
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.empty_like(x)
    big = x >= 0.5
    out[big] = _lgamma_lanczos(x[big])
    small = ~big
    if np.any(small):
        xs = x[small]
        # reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x)
        out[small] = np.log(np.pi / np.abs(np.sin(np.pi * xs))) - _lgamma_lanczos(1.0 - xs)
    return out[0] if scalar else out


def digamma(x):
    """Logarithmic derivative of the Gamma function for x > 0."""
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0
    x = np.array(np.atleast_1d(x), dtype=np.float64)
    if np.any(x <= 0):
        raise ValueError("digamma is only implemented for positive arguments")
    acc = np.zeros_like(x)
    while True:
        low = x < _DIGAMMA_SHIFT
        if not np.any(low):
            break
        acc[low] -= 1.0 / x[low]
        x[low] += 1.0
    inv2 = 1.0 / (x * x)
    series = np.zeros_like(x)
    for coef in _DIGAMMA_SERIES[::-1]:
        series = (series + coef) * inv2
    out = acc + np.log(x) - 0.5 / x - series
    return out[0] if scalar else out


def _gammainc_series(a, x, max_iter):
    ap = a.copy()
    term = 1.0 / a
    total = term.copy()
    active = np.ones(a.shape, dtype=bool)
    for _ in range(max_iter):
        ap = ap + 1.0
        term = np.where(active, term * x / ap, term)
        total = np.where(active, total + term, total)
        active &= np.abs(term) > np.abs(total) * _EPS
        if not np.any(active):
            break
    return total * np.exp(-x + a * np.log(x) - lgamma(a))


def _gammaincc_cf(a, x, max_iter):
    b = x + 1.0 - a
    c = np.full_like(a, 1.0 / _TINY)
    d = 1.0 / b
    h = d.copy()
    active = np.ones(a.shape, dtype=bool)
    for i in range(1, max_iter + 1):
        an = -i * (i - a)
        b = b + 2.0
        d_new = an * d + b
        d_new = np.where(np.abs(d_new) < _TINY, _TINY, d_new)
        c_new = b + an / c
        c_new = np.where(np.abs(c_new) < _TINY, _TINY, c_new)
        d_new = 1.0 / d_new
        delta = d_new * c_new
        d = np.where(active, d_new, d)
        c = np.where(active, c_new, c)
        h = np.where(active, h * delta, h)
        active &= np.abs(delta - 1.0) > _EPS
        if not np.any(active):
            break
    return np.exp(-x + a * np.log(x) - lgamma(a)) * h


def gammainc(a, x, max_iter=2000):
    """Regularized lower incomplete gamma P(a, x) for a > 0, x >= 0."""
    a, x = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(x, dtype=np.float64))
    scalar = a.ndim == 0
    a = np.atleast_1d(a).astype(np.float64)
    x = np.atleast_1d(x).astype(np.float64)
    if np.any(a <= 0) or np.any(x < 0):
        raise ValueError("gammainc requires a > 0 and x >= 0")
    out = np.zeros_like(x)
    pos = x > 0
    use_series = pos & (x < a + 1.0)
    use_cf = pos & ~use_series
    if np.any(use_series):
        out[use_series] = _gammainc_series(a[use_series], x[use_series], max_iter)
    if np.any(use_cf):
        out[use_cf] = 1.0 - _gammaincc_cf(a[use_cf], x[use_cf], max_iter)
    out = np.clip(out, 0.0, 1.0)
    return out[0] if scalar else out
