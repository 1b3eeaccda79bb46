"""One-dimensional maximisation: dense grid followed by golden-section refinement."""

from __future__ import annotations

import math

import numpy as np

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_max(f, a, b, tol=1e-10, max_iter=200):
    """Maximise a unimodal ``f`` on ``[a, b]``; returns ``(x, f(x))``.

    Non-finite values are treated as -inf so singular points are never
    selected.
    """

    def g(x):
        y = f(x)
        return y if np.isfinite(y) else -np.inf

    a, b = min(a, b), max(a, b)
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = g(c), g(d)
    best_x, best_y = (c, fc) if fc >= fd else (d, fd)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = g(c)
            if fc > best_y:
                best_x, best_y = c, fc
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = g(d)
            if fd > best_y:
                best_x, best_y = d, fd
    return best_x, best_y


def local_maxima(values: np.ndarray, periodic=True) -> np.ndarray:
    """Indices of (non-strict) local maxima of a sampled curve, best first."""
    v = np.where(np.isfinite(values), values, -np.inf)
    if periodic:
        left, right = np.roll(v, 1), np.roll(v, -1)
    else:
        left = np.concatenate(([-np.inf], v[:-1]))
        right = np.concatenate((v[1:], [-np.inf]))
    idx = np.flatnonzero((v >= left) & (v >= right) & np.isfinite(v))
    return idx[np.argsort(-v[idx], kind="stable")]
