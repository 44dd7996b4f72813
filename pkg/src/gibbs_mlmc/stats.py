"""Small statistical utilities: log-log regression and KS distances."""

from __future__ import annotations

import math

import numpy as np

from .errors import ParameterError

__all__ = ["fit_line", "fit_log2_slope", "ks_statistic", "weighted_ks_statistic"]


def fit_line(x, y) -> tuple[float, float, float]:
    """Least-squares line y = a x + b; returns (a, b, r_squared)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2:
        raise ParameterError("need at least two points for a line fit")
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0.0:
        raise ParameterError("degenerate abscissae in line fit")
    a = float(np.sum((x - xm) * (y - ym)) / sxx)
    b = ym - a * xm
    resid = y - (a * x + b)
    syy = float(np.sum((y - ym) ** 2))
    r2 = 1.0 if syy == 0.0 else 1.0 - float(np.sum(resid**2)) / syy
    return a, b, r2


def fit_log2_slope(x, y) -> tuple[float, float, float]:
    """Slope of log2 y against log2 x; returns (slope, intercept, r2)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ParameterError("log-log fit requires positive data")
    return fit_line(np.log2(x), np.log2(y))


def ks_statistic(samples, cdf) -> float:
    """One-sample Kolmogorov-Smirnov distance against a CDF callable."""
    s = np.sort(np.asarray(samples, dtype=np.float64))
    n = s.size
    f = np.asarray(cdf(s), dtype=np.float64)
    lo = np.arange(0, n) / n
    hi = np.arange(1, n + 1) / n
    return float(max(np.max(hi - f), np.max(f - lo)))


def weighted_ks_statistic(samples, weights, cdf) -> float:
    """KS distance of a weighted empirical CDF against a CDF callable.

    Weights must be nonnegative; they are normalized internally.
    """
    s = np.asarray(samples, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise ParameterError("weights must be nonnegative")
    total = float(w.sum())
    if total <= 0 or not math.isfinite(total):
        raise ParameterError("weights must have positive finite sum")
    order = np.argsort(s)
    s = s[order]
    cw = np.cumsum(w[order]) / total
    f = np.asarray(cdf(s), dtype=np.float64)
    below = np.concatenate(([0.0], cw[:-1]))
    return float(max(np.max(cw - f), np.max(f - below)))
