import numpy as np
import pytest

import accoref.autodiff as ad


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def directional_grad_check(build_loss, tensors, rng, trials=20, h=1e-4, tol=1e-4,
                           low=-2.0, high=2.0):
    """Central finite-difference check along random directions.

    ``build_loss`` recomputes the scalar loss from the tensors' current
    data. Each trial redraws the tensor contents in [low, high], compares
    the analytic directional derivative with the central difference for a
    random unit direction in each tensor, and requires relative error
    below ``tol``.
    """
    failures = []
    for trial in range(trials):
        for t in tensors:
            t.data[...] = rng.uniform(low, high, size=t.data.shape)
        for t in tensors:
            if t.grad is not None:
                t.grad[...] = 0.0
            else:
                t.grad = np.zeros_like(t.data)
        loss = build_loss()
        ad.backward(loss)
        for t in tensors:
            v = rng.standard_normal(t.data.shape)
            v /= np.linalg.norm(v.reshape(-1))
            analytic = float((t.grad * v).sum())
            t.data += h * v
            f_plus = build_loss().item()
            t.data -= 2 * h * v
            f_minus = build_loss().item()
            t.data += h * v
            numeric = (f_plus - f_minus) / (2 * h)
            err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
            if err > tol:
                failures.append((trial, getattr(t, "name", "tensor"), err))
    assert not failures, f"gradient mismatches: {failures[:5]}"
