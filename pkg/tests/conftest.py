import numpy as np
import pytest

from contrnp.autodiff import Tensor


def finite_diff_grads(fn, tensors, h=1e-5):
    """Central finite differences of a scalar fn w.r.t. each tensor in
    `tensors`. fn takes no args and reads the tensors' .data in place."""
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = fn()
            flat[i] = orig - h
            lm = fn()
            flat[i] = orig
            gflat[i] = (lp - lm) / (2 * h)
        grads.append(g)
    return grads


def rel_err(a, b, floor=1e-8):
    return np.abs(a - b) / np.maximum(np.abs(b), floor)


def check_grads(build_loss, params, tol=1e-4, h=1e-5):
    """Autodiff gradients of build_loss() vs central finite differences."""
    loss = build_loss()
    for p in params:
        p.zero_grad()
    loss.backward()
    fd = finite_diff_grads(lambda: build_loss().item(), params, h=h)
    for p, g in zip(params, fd):
        assert np.all(rel_err(p.grad, g) < tol), \
            f"gradient mismatch: max rel err {rel_err(p.grad, g).max():.3g}"


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)
