"""Dense float64 vector/matrix helpers, activations, and deterministic RNG.

Everything here is a pure function over numpy arrays. Matrices are 2-D
row-major float64 arrays, vectors are 1-D float64 arrays. Random state is
an explicit ``numpy.random.Generator`` seeded through :func:`make_rng`, so
the same seed always reproduces the same draw sequence.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError

RngState = np.random.Generator


def make_rng(seed: int) -> RngState:
    """Deterministic generator for ``seed`` (PCG64, platform-independent)."""
    return np.random.Generator(np.random.PCG64(seed))


def _as_rng(rng: RngState | int) -> RngState:
    if isinstance(rng, np.random.Generator):
        return rng
    return make_rng(int(rng))


def sigmoid(x):
    """Logistic function, overflow-safe for any finite input."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def tanh_act(x):
    """Hyperbolic tangent; saturates smoothly at +-1."""
    out = np.tanh(np.asarray(x, dtype=np.float64))
    if out.ndim == 0:
        return float(out)
    return out


def binomial_kernel(window: int) -> np.ndarray:
    """Symmetric smoothing kernel from Pascal's triangle row ``window - 1``.

    Coefficients are C(window-1, k) / 2^(window-1); they are exact dyadic
    rationals in float64 for any practical window, so the kernel sums to
    exactly 1.0.
    """
    if window < 1 or window % 2 == 0:
        raise DimensionError(f"window must be odd and >= 1, got {window}")
    n = window - 1
    return np.array([math.comb(n, k) for k in range(window)], dtype=np.float64) / (2.0**n)


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise DimensionError(f"matvec shapes do not agree: {m.shape} @ {v.shape}")
    return m @ v


def add(v: np.ndarray, w: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if v.shape != w.shape:
        raise DimensionError(f"add shapes do not agree: {v.shape} vs {w.shape}")
    return v + w


def hadamard(v: np.ndarray, w: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if v.shape != w.shape:
        raise DimensionError(f"hadamard shapes do not agree: {v.shape} vs {w.shape}")
    return v * w


def xavier_init(rows: int, cols: int, rng: RngState | int) -> np.ndarray:
    """Uniform draw in +-sqrt(6 / (rows + cols)); deterministic per rng state."""
    if rows < 1 or cols < 1:
        raise DimensionError(f"xavier_init needs positive dims, got {rows}x{cols}")
    bound = math.sqrt(6.0 / (rows + cols))
    return _as_rng(rng).uniform(-bound, bound, size=(rows, cols))
