import numpy as np
import pytest

from gnrul.gradcore import Tensor, backward


def numeric_grad(fn, arrays, h=1e-5):
    """Central finite differences of scalar ``fn(*arrays)`` wrt each array."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            up = fn(*arrays)
            arr[idx] = orig - h
            down = fn(*arrays)
            arr[idx] = orig
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def tape_grad(build, arrays):
    """Gradient of ``build(*tensors)`` (a scalar Tensor) through the tape."""
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = build(*tensors)
    backward(loss)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def check_grad(build, arrays, rtol=1e-4, atol=1e-7):
    def scalar(*arrs):
        return build(*[Tensor(a) for a in arrs]).item()

    expected = numeric_grad(scalar, [np.array(a, dtype=float) for a in arrays])
    got = tape_grad(build, arrays)
    for e, g in zip(expected, got):
        np.testing.assert_allclose(g, e, rtol=rtol, atol=atol)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
