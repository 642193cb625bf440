"""Small numeric helpers shared by the experiment harnesses."""

import numpy as np


def pearson_r(xs, ys) -> float:
    """Pearson product-moment correlation.

    Raises ValueError on length mismatch, fewer than two points, or zero
    variance in either sequence (the coefficient is undefined there).
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"inputs must be equal-length 1-d sequences, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ValueError("need at least two points")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if denom == 0.0:
        raise ValueError("zero variance: correlation undefined")
    return float((xc * yc).sum() / denom)


def pooled_lag_correlation(counts: np.ndarray) -> float:
    """Correlation between successive layers' spike counts one step apart.

    counts has shape (steps, layers); all (layer n at t, layer n+1 at t+1)
    pairs are pooled into a single coefficient.
    """
    steps, layers = counts.shape
    xs, ys = [], []
    for n in range(layers - 1):
        xs.append(counts[:-1, n])
        ys.append(counts[1:, n + 1])
    return pearson_r(np.concatenate(xs), np.concatenate(ys))
