"""Central finite-difference checks for ``fun(x) -> (value, grad)`` callables."""

from __future__ import annotations

import numpy as np


def numeric_gradient(fun, x, step=1e-5):
    """Central differences of the scalar part of ``fun`` at ``x`` (any shape)."""
    x = np.asarray(x, dtype=float)
    flat = x.ravel().copy()
    out = np.empty_like(flat)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        fp = fun(flat.reshape(x.shape))[0]
        flat[i] = keep - step
        fm = fun(flat.reshape(x.shape))[0]
        flat[i] = keep
        out[i] = (fp - fm) / (2.0 * step)
    return out.reshape(x.shape)


def relative_error(analytic, numeric, floor=1e-3):
    """Largest entrywise ``|a - n| / max(|a|, |n|, floor * max|n|)``.

    The floor keeps entries that are tiny next to the rest of the gradient
    from being judged on round-off alone.
    """
    a = np.ravel(analytic).astype(float)
    n = np.ravel(numeric).astype(float)
    scale = max(float(np.abs(n).max(initial=0.0)), float(np.abs(a).max(initial=0.0)))
    if scale == 0.0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor * scale)
    return float(np.max(np.abs(a - n) / denom))


def check_gradient(fun, x, step=1e-5, floor=1e-3):
    """Relative error between the analytic gradient of ``fun`` and central differences at ``x``."""
    _, g = fun(np.asarray(x, dtype=float))
    return relative_error(g, numeric_gradient(fun, x, step), floor)
