"""Maximum-likelihood phase estimation, used to check Cramér–Rao saturation."""

from __future__ import annotations

import numpy as np

from .fisher import fisher_information
from .interferometer import OutcomeDistribution


def ml_phase_estimate(dist: OutcomeDistribution, counts, bracket, grid_points=512, newton_steps=8):
    """ML phase for multinomial ``counts`` (one row per experiment).

    Counts include the no-detection category as the last column. The
    search is confined to ``bracket``, which must not contain a second
    likelihood mode (fringes are symmetric about their extrema).
    """
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    laws = [o.law for o in dist.outcomes] + [dist.complement]
    if counts.shape[1] != len(laws):
        raise ValueError(f"expected {len(laws)} count columns, got {counts.shape[1]}")
    lo, hi = bracket
    grid = np.linspace(lo, hi, grid_points)
    logp = np.log(np.maximum(dist.prob_matrix(grid, include_complement=True), 1e-300))
    est = grid[np.argmax(counts @ logp, axis=1)]

    for _ in range(newton_steps):
        score = np.zeros_like(est)
        curv = np.zeros_like(est)
        for k, law in enumerate(laws):
            p = np.maximum(law.prob(est), 1e-300)
            d1, d2 = law.deriv(est), law.deriv2(est)
            score += counts[:, k] * d1 / p
            curv += counts[:, k] * (d2 / p - (d1 / p) ** 2)
        step = np.where(curv < 0, -score / np.where(curv < 0, curv, -1.0), 0.0)
        est = np.clip(est + step, lo, hi)
    return est


def cramer_rao_study(dist, phi, n_pairs, n_trials, rng, bracket=None):
    """Empirical ML variance versus the Cramér–Rao bound at ``phi``.

    Returns ``(estimates, variance, bound)`` where the bound is
    ``1 / (n_pairs * F(phi))`` with F summed over the registered outcomes.
    """
    probs = dist.prob_matrix(np.array([phi]), include_complement=True)[:, 0]
    probs = probs / probs.sum()
    counts = rng.multinomial(n_pairs, probs, size=n_trials)
    if bracket is None:
        # cos(m phi) is monotone between consecutive extrema, half a period apart
        half = dist.period / 2.0
        k = np.floor(phi / half)
        bracket = (k * half, (k + 1) * half)
    est = ml_phase_estimate(dist, counts, bracket)
    bound = 1.0 / (n_pairs * fisher_information(dist, phi))
    return est, float(np.var(est, ddof=1)), bound
