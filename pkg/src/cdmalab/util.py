"""Small numerical helpers used throughout the package."""
from __future__ import annotations

import numpy as np


def as_rng(rng) -> np.random.Generator:
    """Normalise a seed or Generator into a numpy Generator (PCG64)."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def spin_table(n: int) -> np.ndarray:
    """All 2^n sign configurations as a (2^n, n) float array of +/-1.

    Row r encodes the binary digits of r, bit j in column j (LSB first),
    mapped 0 -> -1 and 1 -> +1.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0:
        return np.zeros((1, 0))
    bits = (np.arange(1 << n, dtype=np.int64)[:, None] >> np.arange(n)[None, :]) & 1
    return 2.0 * bits - 1.0


def logsumexp_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise log(sum(exp(a))) with max-shift stabilisation."""
    m = a.max(axis=-1)
    return m + np.log(np.exp(a - m[..., None]).sum(axis=-1))


def log_cosh(x: np.ndarray) -> np.ndarray:
    """log(cosh(x)), overflow-free for any magnitude."""
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - np.log(2.0)


def log1p_tanh_prod(u: np.ndarray, h: np.ndarray) -> np.ndarray:
    """log(1 + tanh(u) * tanh(h)), computed as logcosh(u+h) - logcosh(u) - logcosh(h).

    The direct form underflows to log(0) when u and h saturate with opposite
    signs; this identity stays finite.
    """
    return log_cosh(u + h) - log_cosh(u) - log_cosh(h)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """1 / (1 + exp(-x)) without overflow for large |x|."""
    out = np.empty_like(np.asarray(x, dtype=float))
    x = np.asarray(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
