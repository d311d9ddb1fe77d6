"""Shared test helpers: finite-difference gradient checking."""

from __future__ import annotations

import numpy as np
import pytest

import adaptvos.autodiff as autodiff

FD_EPS = 1e-5
FD_RTOL = 1e-4


@pytest.fixture(autouse=True)
def _check_finite():
    """Ops assert finiteness of every forward result while tests run."""
    autodiff.CHECK_FINITE = True
    yield
    autodiff.CHECK_FINITE = False


def numerical_grad(f, x: np.ndarray, eps: float = FD_EPS) -> np.ndarray:
    """Central finite differences of a scalar function f at x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def assert_grads_close(analytic: np.ndarray, numeric: np.ndarray, rtol: float = FD_RTOL):
    """Elementwise relative comparison; entries tiny on both sides pass."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    assert analytic.shape == numeric.shape
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    mask = scale > 1e-7
    rel = np.zeros_like(scale)
    rel[mask] = np.abs(analytic - numeric)[mask] / scale[mask]
    worst = rel.max() if rel.size else 0.0
    assert worst < rtol, f"gradient mismatch: max relative error {worst:.3e}"
