"""Multilevel estimator assembly, allocation and rate fitting.

Level semantics: level 0 samples the base quantity P_0; level l >= 1
samples one realization of the coupled difference P_l - P_{l-1}.
Classical sample counts follow N_l ~ sqrt(V_l / C_l); the quantum-model
allocation reproduces the per-level standard-deviation schedules of the
three rate regimes and converts them into model query counts
sqrt(r) * sqrt(V_l) / sigma_l * C_l with unit constant and no log
factors (only scaling exponents are meaningful).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ParameterError
from .rng import RngStream
from .stats import fit_line

__all__ = [
    "LevelStats",
    "RateFit",
    "CostReport",
    "FunctionLevelSampler",
    "estimate_level_stats",
    "mlmc_estimate",
    "allocate_classical",
    "quantum_sigma_schedule",
    "allocate_quantum_model",
    "fit_rates",
]


@dataclass
class LevelStats:
    """Per-level (mean, variance, mean cost, n) pilot summaries."""

    mean: np.ndarray
    variance: np.ndarray
    mean_cost: np.ndarray
    n_used: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.variance = np.asarray(self.variance, dtype=np.float64)
        self.mean_cost = np.asarray(self.mean_cost, dtype=np.float64)
        self.n_used = np.asarray(self.n_used, dtype=np.int64)
        if np.any(self.variance < 0) or np.any(self.mean_cost < 0):
            raise ParameterError("variances and costs must be nonnegative")

    @property
    def n_levels(self) -> int:
        return len(self.mean)


@dataclass(frozen=True)
class RateFit:
    """Fitted decay/growth exponents: |mean| ~ 2^{-alpha l}, V ~ 2^{-beta l}, C ~ 2^{gamma l}."""

    alpha: float
    beta: float
    gamma: float
    r2_alpha: float
    r2_beta: float
    r2_gamma: float
    k1: float  # 2^{intercept} of the |mean| fit (bias constant)
    k2: float
    k3: float


@dataclass
class CostReport:
    estimate: float
    est_variance: float
    classical_queries: int
    quantum_model_queries: float
    per_level: list = field(default_factory=list)  # (level, n_or_sigma, mean, variance, cost)


class FunctionLevelSampler:
    """Level sampler defined by a batch function.

    ``batch_fn(level, rng, n) -> (values (n,), queries_per_sample)``
    draws n independent realizations of P_0 (level 0) or
    P_l - P_{l-1} (level >= 1).
    """

    def __init__(self, batch_fn: Callable, max_level_hint: Optional[int] = None, cost_fn: Optional[Callable[[int], float]] = None):
        self._fn = batch_fn
        self.max_level_hint = max_level_hint
        self.cost_fn = cost_fn

    def sample_many(self, level: int, rng: RngStream, n: int) -> tuple[np.ndarray, float]:
        values, cost = self._fn(level, rng, n)
        return np.asarray(values, dtype=np.float64), float(cost)

    def sample(self, level: int, rng: RngStream) -> tuple[float, float]:
        v, c = self.sample_many(level, rng, 1)
        return float(v[0]), c


def estimate_level_stats(sampler, levels: Sequence[int], n_pilot: int, rng: RngStream) -> LevelStats:
    """Pilot mean/variance/cost per level from n_pilot independent draws."""
    if n_pilot < 2:
        raise ParameterError("n_pilot must be at least 2")
    means, variances, costs, ns = [], [], [], []
    for lev in levels:
        try:
            values, cost = sampler.sample_many(int(lev), rng.child(int(lev)), n_pilot)
        except Exception as exc:
            raise type(exc)(f"level {lev} pilot: {exc}") from exc
        means.append(float(np.mean(values)))
        variances.append(float(np.var(values, ddof=1)))
        costs.append(cost)
        ns.append(len(values))
    return LevelStats(np.array(means), np.array(variances), np.array(costs), np.array(ns))


def mlmc_estimate(sampler, n_per_level: Sequence[int], rng: RngStream, batch_cap: int = 1 << 18) -> CostReport:
    """Multilevel estimate sum_l mean_l with independent streams per level.

    The variance estimate is sum_l Vhat_l / N_l (levels with N_l = 1
    contribute zero).
    """
    n_per_level = [int(n) for n in n_per_level]
    if len(n_per_level) == 0 or any(n < 1 for n in n_per_level):
        raise ParameterError("n_per_level must be nonempty with all counts >= 1")
    total = 0.0
    var_est = 0.0
    queries = 0
    rows = []
    for lev, n in enumerate(n_per_level):
        lev_rng = rng.child(lev)
        s = 0.0
        s2 = 0.0
        cost = 0.0
        done = 0
        chunk_index = 0
        while done < n:
            m = min(batch_cap, n - done)
            try:
                values, per_cost = sampler.sample_many(lev, lev_rng.child(chunk_index), m)
            except Exception as exc:
                raise type(exc)(f"level {lev}, samples {done}..{done + m}: {exc}") from exc
            s += float(np.sum(values))
            s2 += float(np.sum(np.square(values)))
            cost += per_cost * m
            done += m
            chunk_index += 1
        mean = s / n
        var = (s2 - n * mean * mean) / (n - 1) if n > 1 else 0.0
        var = max(var, 0.0)
        total += mean
        var_est += var / n
        queries += int(round(cost))
        rows.append((lev, n, mean, var, cost))
    return CostReport(
        estimate=total,
        est_variance=var_est,
        classical_queries=queries,
        quantum_model_queries=0.0,
        per_level=rows,
    )


def allocate_classical(stats: LevelStats, eps: float) -> list[int]:
    """Sample counts N_l = ceil(mu sqrt(V_l / C_l)) with sum V_l/N_l <= eps^2/2.

    The other half of the eps^2 budget is the squared-bias share,
    controlled by the caller's choice of maximum level.
    """
    if eps <= 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    V = stats.variance
    C = np.maximum(stats.mean_cost, 1e-300)
    if not np.any(stats.mean_cost > 0):
        raise ParameterError("allocation requires at least one level with positive cost")
    if np.all(V == 0):
        return [1] * stats.n_levels
    mu = (2.0 / eps**2) * float(np.sum(np.sqrt(V * C)))
    out = []
    for v, c in zip(V, C):
        if v == 0.0:
            out.append(1)
        else:
            out.append(max(1, int(math.ceil(mu * math.sqrt(v / c)))))
    return out


def quantum_sigma_schedule(beta: float, gamma: float, sigma_hat: float, L: int) -> np.ndarray:
    """Per-level deviation targets sigma_l of the quantum-model allocation.

    The three regimes split sigma_hat/2 across levels 0..L so that
    sum_l sigma_l <= sigma_hat/2.
    """
    if sigma_hat <= 0:
        raise ParameterError("sigma_hat must be positive")
    levels = np.arange(L + 1, dtype=np.float64)
    delta = 0.5 * beta - gamma
    if delta > 0:
        r = 2.0 ** (-delta / 2.0)
        return (sigma_hat / 2.0) * (1.0 - r) * r**levels
    if delta == 0:
        return np.full(L + 1, sigma_hat / (2.0 * (L + 1)))
    # growing-deviation regime; normalized so the sum is
    # (sigma_hat/2)(1 - 2^{-g(L+1)/2}) and stays inside the budget
    g = -delta  # gamma - beta/2 > 0
    r = 2.0 ** (g / 2.0)
    return (sigma_hat / 2.0) * 2.0 ** (-g * L / 2.0) * (1.0 - 1.0 / r) * r**levels


def allocate_quantum_model(
    K1: float,
    alpha: float,
    beta: float,
    gamma: float,
    stats: LevelStats,
    sigma_hat: float,
    r: int = 1,
) -> tuple[int, np.ndarray, float]:
    """Level count, sigma schedule and model query count of the quantum run.

    L is the smallest integer with K1 2^{-alpha L} <= sigma_hat/sqrt2,
    capped at the deepest level available in ``stats`` (per-level V_l
    and C_l come from the pilot, never from extrapolation).  The model
    cost is sum_l sqrt(r) sqrt(V_l)/sigma_l * C_l with unit constant.
    """
    if alpha <= 0 or beta <= 0 or gamma <= 0:
        raise ParameterError("rates alpha, beta, gamma must be positive")
    if sigma_hat <= 0 or K1 < 0:
        raise ParameterError("need sigma_hat > 0 and K1 >= 0")
    if K1 == 0:
        L_rule = 0
    else:
        L_rule = max(0, int(math.ceil(math.log2(math.sqrt(2.0) * K1 / sigma_hat) / alpha - 1e-12)))
    L = min(L_rule, stats.n_levels - 1)
    sigmas = quantum_sigma_schedule(beta, gamma, sigma_hat, L)
    V = stats.variance[: L + 1]
    C = stats.mean_cost[: L + 1]
    queries = float(np.sum(math.sqrt(r) * np.sqrt(V) / sigmas * C))
    return L, sigmas, queries


def fit_rates(stats: LevelStats, fit_range: Optional[Sequence[int]] = None) -> RateFit:
    """Least-squares rate exponents over the given level range.

    alpha and beta are the negated slopes of log2|mean| and log2 V
    against the level index; gamma is the positive slope of log2 C.
    The default range is levels 1..L (level-0 statistics describe P_0
    rather than a difference).
    """
    if fit_range is None:
        fit_range = range(1, stats.n_levels)
    levels = np.array([int(l) for l in fit_range])
    if len(levels) < 3:
        raise ParameterError("rate fitting needs at least three levels")
    if np.any(levels < 0) or np.any(levels >= stats.n_levels):
        raise ParameterError("fit_range outside the available levels")
    V = stats.variance[levels]
    M = np.abs(stats.mean[levels])
    C = stats.mean_cost[levels]
    if np.any(V <= 0):
        raise ParameterError("rate fitting requires positive variances in range")
    if np.any(M <= 0) or np.any(C <= 0):
        raise ParameterError("rate fitting requires nonzero means and positive costs in range")
    sa, ia, r2a = fit_line(levels, np.log2(M))
    sb, ib, r2b = fit_line(levels, np.log2(V))
    sg, ig, r2g = fit_line(levels, np.log2(C))
    return RateFit(
        alpha=-sa,
        beta=-sb,
        gamma=sg,
        r2_alpha=r2a,
        r2_beta=r2b,
        r2_gamma=r2g,
        k1=2.0**ia,
        k2=2.0**ib,
        k3=2.0**ig,
    )
