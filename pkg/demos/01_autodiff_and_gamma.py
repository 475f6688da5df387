"""
Gradients and Gamma likelihoods
===============================

A walk through the two numerical foundations: the reverse-mode tape and
the Gamma negative log-likelihood used as the training objective.
"""

import numpy as np

from gnrul import gradcore as gc
from gnrul.prob import GammaParams, gamma_quantile, gamma_sample, gamma_stats, nll_grad, nll_terms

# A tensor that requires a gradient is a leaf of the tape.
x = gc.Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True)

# Build a small expression: softplus keeps things positive, like the model heads do.
y = (gc.softplus(x) * x).sum()
gc.backward(y)
print("value:", y.item())
print("tape gradient:", x.grad)

# Central differences agree with the tape.
h = 1e-6
fd = [(np.sum(np.logaddexp(0, x.data + h * e) * (x.data + h * e))
       - np.sum(np.logaddexp(0, x.data - h * e) * (x.data - h * e))) / (2 * h) for e in np.eye(3)]
print("finite differences:", np.array(fd))

# Gamma predictions use shape alpha and rate beta; the mean is alpha / beta.
p = GammaParams(4.0, 2.0)
print("\nGamma(4, 2) stats:", gamma_stats(p))
print("5/50/95% quantiles:", [round(float(gamma_quantile(p, q)), 4) for q in (0.05, 0.5, 0.95)])

draws = gamma_sample(p, np.random.default_rng(0), 100_000)
print("sample mean / variance:", draws.mean().round(4), draws.var().round(4))

# The NLL is differentiable in alpha and beta; the tape matches the closed form.
a = gc.Tensor(np.array(4.0), requires_grad=True)
b = gc.Tensor(np.array(2.0), requires_grad=True)
gc.backward(nll_terms(GammaParams(a, b), np.array(1.3)).sum())
print("\nd NLL / d(alpha, beta) on the tape:", float(a.grad), float(b.grad))
print("closed form:                       ", *map(float, nll_grad(p, 1.3)))
