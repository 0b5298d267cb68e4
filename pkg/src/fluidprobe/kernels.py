"""Cubic B-spline smoothing kernel in three dimensions.

The kernel is normalized so that it integrates to one over R^3 for any
support radius h.  Both the value and the gradient have compact support:
they are exactly zero at and beyond distance h.
"""

import math
import os

import numpy as np
import numba
from numba import njit

# probing the TBB layer emits a spurious warning on toolchains with an
# older TBB; prefer omp unless the user pinned a layer themselves
if not (os.environ.get("NUMBA_THREADING_LAYER")
        or os.environ.get("NUMBA_THREADING_LAYER_PRIORITY")):
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


@njit(cache=True, inline="always")
def w_cubic(r, h):
    """Kernel value at scalar distance r >= 0."""
    q = r / h
    sigma = 8.0 / (math.pi * h * h * h)
    if q < 0.5:
        return sigma * (6.0 * (q * q * q - q * q) + 1.0)
    if q < 1.0:
        u = 1.0 - q
        return sigma * 2.0 * u * u * u
    return 0.0


@njit(cache=True, inline="always")
def grad_coef_cubic(r, h):
    """Scalar c(r) such that grad W(d) = c * d for d = x_i - x_j, |d| = r.

    Writing the gradient this way removes the 1/r singularity: the q -> 0
    limit of c is finite and the gradient itself vanishes at r = 0.
    """
    q = r / h
    sigma = 8.0 / (math.pi * h * h * h)
    if q <= 1e-12 or q >= 1.0:
        return 0.0
    if q <= 0.5:
        return sigma * 6.0 * (3.0 * q - 2.0) / (h * h)
    u = 1.0 - q
    return -sigma * 6.0 * u * u / (q * h * h)


class SmoothingKernel:
    """Cubic B-spline kernel with support radius h.

    Evaluations accept a single offset vector of shape (3,) or a batch of
    shape (..., 3) and broadcast over the leading axes.
    """

    def __init__(self, h: float):
        h = float(h)
        if not math.isfinite(h) or h <= 0.0:
            raise ValueError(f"support radius must be positive and finite, got {h}")
        self.h = h
        self.sigma = 8.0 / (math.pi * h ** 3)

    def value(self, r) -> np.ndarray:
        r = _as_offsets(r)
        q = np.linalg.norm(r, axis=-1) / self.h
        w = np.zeros_like(q)
        near = q < 0.5
        far = (q >= 0.5) & (q < 1.0)
        qn = q[near]
        w[near] = self.sigma * (6.0 * (qn ** 3 - qn ** 2) + 1.0)
        u = 1.0 - q[far]
        w[far] = self.sigma * 2.0 * u ** 3
        return w

    def gradient(self, r) -> np.ndarray:
        r = _as_offsets(r)
        dist = np.linalg.norm(r, axis=-1)
        q = dist / self.h
        coef = np.zeros_like(q)
        near = (q > 1e-12) & (q <= 0.5)
        far = (q > 0.5) & (q < 1.0)
        coef[near] = self.sigma * 6.0 * (3.0 * q[near] - 2.0) / self.h ** 2
        u = 1.0 - q[far]
        coef[far] = -self.sigma * 6.0 * u ** 2 / (q[far] * self.h ** 2)
        return coef[..., None] * r


def _as_offsets(r) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] != 3:
        raise ValueError(f"expected offset vectors with last axis 3, got shape {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ValueError("offset vectors contain non-finite values")
    return r


def kernel_value(r, h: float):
    """W(r, h) for offset vector(s) r."""
    return SmoothingKernel(h).value(r)


def kernel_gradient(r, h: float):
    """grad W(r, h) with respect to r, for offset vector(s) r."""
    return SmoothingKernel(h).gradient(r)
