"""Shared test helpers: finite-difference gradient checking."""

import numpy as np
import pytest

from roomsense.autodiff import Tensor, backward, no_grad, reset_tape


def leaf(rng, shape, lo=-2.0, hi=2.0):
    """float64 leaf tensor with values in [lo, hi]."""
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True, dtype=np.float64)


def spread_leaf(rng, shape, gap=0.05):
    """Leaf with pairwise-distinct values (safe around max/argmax kinks)."""
    n = int(np.prod(shape))
    vals = (np.arange(n, dtype=np.float64) - n / 2) * gap
    return Tensor(rng.permutation(vals).reshape(shape), requires_grad=True,
                  dtype=np.float64)


def gradcheck_case(inputs, run, h=1e-5, rtol=1e-3):
    """Compare tape gradients of a scalar function against central FD.

    inputs: float64 leaf Tensors; run(*inputs) -> scalar Tensor. The
    relative error bound is per element, with a floor that ignores
    noise on near-zero gradients.
    """
    reset_tape()
    out = run(*inputs)
    assert out.data.size == 1, "gradcheck target must be scalar"
    backward(out)
    analytic = []
    for t in inputs:
        assert t.grad is not None, "no gradient reached an input"
        analytic.append(t.grad.copy())
    reset_tape()

    with no_grad():
        for t, a in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            a_flat = a.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(run(*inputs).data)
                flat[i] = orig - h
                fm = float(run(*inputs).data)
                flat[i] = orig
                fd = (fp - fm) / (2.0 * h)
                err = abs(a_flat[i] - fd)
                tol = rtol * max(abs(a_flat[i]), abs(fd), 1e-4)
                assert err <= tol, (
                    f"grad mismatch at element {i}: analytic {a_flat[i]:.8g} "
                    f"vs fd {fd:.8g} (err {err:.3g} > tol {tol:.3g})")


@pytest.fixture(autouse=True)
def _clean_tape():
    reset_tape()
    yield
    reset_tape()
