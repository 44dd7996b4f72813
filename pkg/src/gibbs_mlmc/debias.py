"""Bias removal by geometric randomization.

Two mechanisms compose into fully unbiased Gibbs estimators:

* ``geom_debias`` wraps any procedure family A(sigma) whose mean-squared
  error contract is E[(A(sigma) - E P)^2] <= sigma^2: draw j ~ Geom(1/2)
  and return A(s0) + 2^j (A(s_j) - A(s_{j-1})) with s_k = 2^{-rho k}
  sigma_tilde / M.  The telescoping expectation removes the residual
  bias; rho > 1/2 and the M inequality keep the variance below
  sigma_tilde^2.

* ``osl_level_batch`` draws the time-shifted coupled level corrections:
  at level l the fine path first runs alone over T_l - T_{l-1}, then
  couples with a coarse path started at x0 over T_{l-1}, so the level
  telescope reaches the stationary expectation as horizons grow.

A geometric index above ``j_cap`` raises an error; truncating instead
would silently reintroduce the bias this module exists to remove.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .errors import JCapExceededError, ParameterError, RegimeError
from .measure_change import spring_level_batch
from .mlmc import (
    CostReport,
    FunctionLevelSampler,
    LevelStats,
    allocate_classical,
    allocate_quantum_model,
    estimate_level_stats,
    fit_rates,
    mlmc_estimate,
)
from .potentials import Observable
from .rng import RngStream, stream_keys

__all__ = [
    "GeomDebiasConfig",
    "TimeSchedule",
    "geom_debias",
    "osl_level_steps",
    "osl_level_cost",
    "osl_level_batch",
    "unbiased_level_sample_osl",
    "UnbiasedGibbsConfig",
    "UnbiasedPlan",
    "prepare_unbiased_plan",
    "unbiased_gibbs_estimate",
    "spring_mlmc_sampler",
]

LN2 = math.log(2.0)


@dataclass(frozen=True)
class GeomDebiasConfig:
    """Randomization parameters.

    For a procedure with cost exponent p the pair must satisfy
    rho in (1/2, 1/p) and M^2 > 2 + 16 / (1 - 2^{1-2 rho}); the default
    (3/4, 8) is the smallest round M for p = 1.
    """

    rho: float = 0.75
    M: float = 8.0
    sigma_tilde: float = 0.02
    j_cap: int = 64

    def __post_init__(self):
        if not (0.5 < self.rho < 1.0):
            raise ParameterError(f"rho must lie in (1/2, 1), got {self.rho}")
        bound = 2.0 + 16.0 / (1.0 - 2.0 ** (1.0 - 2.0 * self.rho))
        if not self.M**2 > bound:
            raise ParameterError(
                f"M^2 = {self.M ** 2:g} must exceed 2 + 16/(1 - 2^(1-2 rho)) = {bound:g}"
            )
        if self.sigma_tilde <= 0:
            raise ParameterError("sigma_tilde must be positive")
        if self.j_cap < 1:
            raise ParameterError("j_cap must be at least 1")


@dataclass(frozen=True)
class TimeSchedule:
    """Affine level horizons T_l = T0 + slope * l.

    ``for_contraction`` picks slope = 4 ln2 / m_hat, which matches the
    geometric decay of the coupling error to the h_l^2 discretization
    error.
    """

    T0: float
    slope: float

    def __post_init__(self):
        if self.T0 <= 0 or self.slope <= 0:
            raise ParameterError("TimeSchedule needs T0 > 0 and slope > 0")

    def horizon(self, level: int) -> float:
        return self.T0 + self.slope * level

    @staticmethod
    def for_contraction(T0: float, m_hat: float) -> "TimeSchedule":
        if m_hat <= 0:
            raise ParameterError("m_hat must be positive")
        return TimeSchedule(T0, 4.0 * LN2 / m_hat)


BiasedProcedure = Callable[[float, RngStream], tuple[float, float]]


def geom_debias(proc: BiasedProcedure, cfg: GeomDebiasConfig, rng: RngStream) -> tuple[float, float, int]:
    """Unbiased wrapper around a biased procedure family.

    Returns (value, total queries, j).  The three inner calls use
    independent child streams.
    """
    j = rng.geometric_half()
    if j > cfg.j_cap:
        raise JCapExceededError(j, cfg.j_cap)
    base = cfg.sigma_tilde / cfg.M
    v0, q0 = proc(base, rng.child(0))
    vj, qj = proc(2.0 ** (-cfg.rho * j) * base, rng.child(1))
    vjm1, qjm1 = proc(2.0 ** (-cfg.rho * (j - 1)) * base, rng.child(2))
    value = v0 + 2.0**j * (vj - vjm1)
    return value, q0 + qj + qjm1, j


# ---------------------------------------------------------------------------
# time-shifted level sampler (one-sided Lipschitz regime)
# ---------------------------------------------------------------------------


def _grid_steps(T: float, h: float) -> int:
    return int(math.ceil(T / h - 1e-9))


def osl_level_steps(sched: TimeSchedule, h0: float, level: int) -> tuple[int, int]:
    """Integer (pre-evolution fine steps, coarse steps) of a level sample.

    Level horizons are rounded up to their own step grid, which keeps
    the fine path of level l-1 and the coarse path of level l on the
    same duration and step.
    """
    if h0 <= 0:
        raise ParameterError("h0 must be positive")
    h_l = h0 * 2.0**-level
    steps_l = _grid_steps(sched.horizon(level), h_l)
    if level == 0:
        return steps_l, 0
    steps_prev = _grid_steps(sched.horizon(level - 1), h0 * 2.0 ** -(level - 1))
    n_pre = steps_l - 2 * steps_prev
    if n_pre < 0:
        raise ParameterError(
            f"schedule slope {sched.slope:g} too small for h0 = {h0:g} at level {level}"
        )
    return n_pre, steps_prev


def osl_level_cost(sched: TimeSchedule, h0: float, level: int) -> int:
    """Exact gradient queries of one level sample."""
    n_pre, n_coarse = osl_level_steps(sched, h0, level)
    return n_pre if level == 0 else n_pre + 3 * n_coarse


def osl_level_batch(p, phi: Observable, level: int, h0: float, sched: TimeSchedule, x0, rng: RngStream, n: int):
    """n independent level-l corrections (or level-0 values).

    Returns (values (n,), gradient queries per sample).
    """
    if p.constants.osl_m is None:
        raise RegimeError(f"potential '{p.name}' has no one-sided Lipschitz constant")
    x0 = np.asarray(x0, dtype=np.float64)
    d = x0.shape[-1]
    k1, k2 = stream_keys(rng.seed, rng.child_ids(n))
    n_pre, n_coarse = osl_level_steps(sched, h0, level)
    if level == 0:
        ends = kernels.em_endpoints(p, x0, h0, n_pre, k1, k2)
        return np.asarray(phi(ends), dtype=np.float64), n_pre
    h_l = h0 * 2.0**-level
    pre = kernels.em_endpoints(p, x0, h_l, n_pre, k1, k2)
    xf, xc, _, _ = kernels.spring_coupled_endpoints(
        p, pre, x0, 0.0, h_l, n_coarse, k1, k2, counter0=n_pre * d
    )
    values = np.asarray(phi(xf), dtype=np.float64) - np.asarray(phi(xc), dtype=np.float64)
    return values, n_pre + 3 * n_coarse


def unbiased_level_sample_osl(p, phi: Observable, level: int, h0: float, sched: TimeSchedule, rng: RngStream, x0=None):
    """Single draw, (delta, grad_queries)."""
    if x0 is None:
        x0 = np.zeros(p.dim)
    values, cost = osl_level_batch(p, phi, level, h0, sched, x0, rng, 1)
    return float(values[0]), cost


# ---------------------------------------------------------------------------
# composed unbiased Gibbs estimators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UnbiasedGibbsConfig:
    """Configuration of one unbiased Gibbs estimate.

    ``schedule`` is required for method 'osl' (defaults to
    T0 = 2, slope = 4 ln2 / osl_m when absent); the dissipative method
    instead maps the inner accuracy to a horizon
    T(sigma) = T_base + c_T ln(1/sigma).
    """

    debias: GeomDebiasConfig = field(default_factory=GeomDebiasConfig)
    h0: float = 0.25
    x0: Optional[np.ndarray] = None
    schedule: Optional[TimeSchedule] = None
    spring_S: Optional[float] = None
    T_base: float = 2.0
    c_T: float = 1.0
    pilot_n: int = 1500
    pilot_levels: int = 4
    alpha: float = 1.0
    batch_cap: int = 1 << 18

    def __post_init__(self):
        if self.h0 <= 0:
            raise ParameterError("h0 must be positive")
        if self.pilot_n < 2 or self.pilot_levels < 1:
            raise ParameterError("pilot needs n >= 2 and at least one level")


@dataclass
class UnbiasedPlan:
    """Pilot statistics shared by replicated estimator runs.

    Holds the fitted bias constant K1 (with alpha pinned), the variance
    decay used to extrapolate beyond the pilot depth, the pilot stats
    themselves and the quantum-model query count at the target accuracy.
    """

    method: str
    stats: LevelStats
    K1: float
    alpha: float
    beta_hat: float
    pilot_queries: int
    quantum_model_queries: float


def _extend_stats(stats: LevelStats, L: int, beta_hat: float, cost_of_level) -> LevelStats:
    """Extrapolate variances geometrically and costs exactly up to level L."""
    have = stats.n_levels
    if L + 1 <= have:
        return LevelStats(stats.mean[: L + 1], stats.variance[: L + 1], stats.mean_cost[: L + 1], stats.n_used[: L + 1])
    mean = np.zeros(L + 1)
    var = np.zeros(L + 1)
    cost = np.zeros(L + 1)
    nu = np.zeros(L + 1, dtype=np.int64)
    mean[:have] = stats.mean
    var[:have] = stats.variance
    cost[:have] = stats.mean_cost
    nu[:have] = stats.n_used
    v_last = stats.variance[have - 1]
    for lev in range(have, L + 1):
        var[lev] = v_last * 2.0 ** (-beta_hat * (lev - (have - 1)))
        cost[lev] = cost_of_level(lev)
        nu[lev] = 0
    return LevelStats(mean, var, cost, nu)


def _fit_pilot(stats: LevelStats, alpha: float) -> tuple[float, float]:
    """(K1, beta_hat) from pilot levels >= 1 with alpha pinned."""
    levels = np.arange(1, stats.n_levels)
    m = np.abs(stats.mean[levels])
    K1 = float(np.max(m * 2.0 ** (alpha * levels))) if np.any(m > 0) else 0.0
    if len(levels) >= 3 and np.all(stats.variance[levels] > 0):
        try:
            beta_hat = fit_rates(stats, levels).beta
        except ParameterError:
            beta_hat = 2.0
    else:
        beta_hat = 2.0
    return K1, float(np.clip(beta_hat, 1.0, 3.0))


def _resolve_schedule(p, cfg: UnbiasedGibbsConfig) -> TimeSchedule:
    if cfg.schedule is not None:
        return cfg.schedule
    m = p.constants.osl_m
    if m is None:
        raise RegimeError(f"potential '{p.name}' has no one-sided Lipschitz constant")
    return TimeSchedule.for_contraction(2.0, m)


def _osl_sampler(p, phi, cfg: UnbiasedGibbsConfig, sched: TimeSchedule):
    x0 = np.zeros(p.dim) if cfg.x0 is None else np.asarray(cfg.x0, dtype=np.float64)

    def batch_fn(level, rng, n):
        return osl_level_batch(p, phi, level, cfg.h0, sched, x0, rng, n)

    return FunctionLevelSampler(batch_fn, cost_fn=lambda lev: float(osl_level_cost(sched, cfg.h0, lev)))


def spring_mlmc_sampler(p, phi: Observable, S: float, h0: float, T: float, x0=None):
    """Fixed-horizon multilevel sampler: plain path at level 0, weighted
    spring corrections at levels >= 1 (step h0 2^-l).  T is rounded up
    to the h0 grid; returns (sampler, T_used)."""
    if h0 <= 0:
        raise ParameterError("h0 must be positive")
    x0 = np.zeros(p.dim) if x0 is None else np.asarray(x0, dtype=np.float64)
    steps0 = _grid_steps(T, h0)
    T_used = steps0 * h0

    def batch_fn(level, rng, n):
        if level == 0:
            k1, k2 = stream_keys(rng.seed, rng.child_ids(n))
            ends = kernels.em_endpoints(p, x0, h0, steps0, k1, k2)
            return np.asarray(phi(ends), dtype=np.float64), steps0
        h_l = h0 * 2.0**-level
        n_coarse = steps0 * 2 ** (level - 1)
        values, _, _ = spring_level_batch(p, phi, S, h_l, n_coarse, x0, rng, n)
        return values, 3 * n_coarse

    def cost_fn(level):
        return float(steps0 if level == 0 else 3 * steps0 * 2 ** (level - 1))

    return FunctionLevelSampler(batch_fn, cost_fn=cost_fn), T_used


def _dissipative_sampler(p, phi, cfg: UnbiasedGibbsConfig, T: float, S: float):
    return spring_mlmc_sampler(p, phi, S, cfg.h0, T, cfg.x0)


def _resolve_spring(p, cfg: UnbiasedGibbsConfig) -> float:
    if cfg.spring_S is not None:
        return cfg.spring_S
    lam = p.constants.weak_osl_lambda
    if lam is None:
        raise RegimeError(f"potential '{p.name}' has no weak one-sided Lipschitz constant")
    return max(lam, 1.0)


def prepare_unbiased_plan(p, phi: Observable, method: str, cfg: UnbiasedGibbsConfig, rng: RngStream) -> UnbiasedPlan:
    """Pilot phase: level statistics, bias constant, rate fit, model cost.

    Drawn from the supplied stream, which callers keep disjoint from the
    production streams so the allocation is independent of the samples
    it budgets.
    """
    if method == "osl":
        if p.constants.osl_m is None:
            raise RegimeError(f"method 'osl' needs a one-sided Lipschitz constant on '{p.name}'")
        sched = _resolve_schedule(p, cfg)
        sampler = _osl_sampler(p, phi, cfg, sched)
    elif method == "dissipative":
        if p.constants.dissipative is None:
            raise RegimeError(f"method 'dissipative' needs dissipativity metadata on '{p.name}'")
        S = _resolve_spring(p, cfg)
        T_pilot = cfg.T_base + cfg.c_T * math.log(cfg.debias.M / cfg.debias.sigma_tilde)
        sampler, _ = _dissipative_sampler(p, phi, cfg, T_pilot, S)
    else:
        raise ParameterError(f"unknown method '{method}' (use 'osl' or 'dissipative')")
    levels = range(cfg.pilot_levels + 1)
    stats = estimate_level_stats(sampler, levels, cfg.pilot_n, rng)
    pilot_queries = int(round(float(np.sum(stats.mean_cost * stats.n_used))))
    K1, beta_hat = _fit_pilot(stats, cfg.alpha)
    gamma_hat = 1.0
    try:
        gamma_hat = fit_rates(stats, range(1, stats.n_levels)).gamma
    except ParameterError:
        pass
    _, _, qmodel = allocate_quantum_model(
        max(K1, 1e-12), cfg.alpha, beta_hat, max(gamma_hat, 1e-6), stats, cfg.debias.sigma_tilde
    )
    return UnbiasedPlan(method, stats, K1, cfg.alpha, beta_hat, pilot_queries, qmodel)


# Inner MSE split: variance gets 3/4 sigma^2 (allocation called with
# eps = sigma sqrt(3/2), whose budget is eps^2/2), bias^2 gets the rest.
_ALLOC_EPS_FACTOR = math.sqrt(1.5)


def _osl_procedure(p, phi, cfg: UnbiasedGibbsConfig, plan: UnbiasedPlan) -> BiasedProcedure:
    sched = _resolve_schedule(p, cfg)
    sampler = _osl_sampler(p, phi, cfg, sched)

    def proc(sigma: float, rng: RngStream) -> tuple[float, float]:
        if plan.K1 > 0:
            # residual level bias <= K1 2^{-alpha L} <= sigma / 2
            L = max(1, int(math.ceil(math.log2(2.0 * plan.K1 / sigma) / cfg.alpha)))
        else:
            L = 1
        stats = _extend_stats(plan.stats, L, plan.beta_hat, sampler.cost_fn)
        ns = allocate_classical(stats, sigma * _ALLOC_EPS_FACTOR)
        rep = mlmc_estimate(sampler, ns, rng, batch_cap=cfg.batch_cap)
        return rep.estimate, rep.classical_queries

    return proc


def _dissipative_procedure(p, phi, cfg: UnbiasedGibbsConfig, plan: UnbiasedPlan) -> BiasedProcedure:
    S = _resolve_spring(p, cfg)

    def proc(sigma: float, rng: RngStream) -> tuple[float, float]:
        T = cfg.T_base + cfg.c_T * math.log(1.0 / sigma)
        sampler, _ = _dissipative_sampler(p, phi, cfg, T, S)
        if plan.K1 > 0:
            # discretization bias <= sigma / (2 sqrt2); the horizon map
            # controls the truncation share
            L = max(1, int(math.ceil(math.log2(2.0 * math.sqrt(2.0) * plan.K1 / sigma) / cfg.alpha)))
        else:
            L = 1
        stats = _extend_stats(plan.stats, L, plan.beta_hat, sampler.cost_fn)
        ns = allocate_classical(stats, sigma * _ALLOC_EPS_FACTOR)
        rep = mlmc_estimate(sampler, ns, rng, batch_cap=cfg.batch_cap)
        return rep.estimate, rep.classical_queries

    return proc


def unbiased_gibbs_estimate(p, phi: Observable, method: str, cfg: UnbiasedGibbsConfig, rng: RngStream, plan: Optional[UnbiasedPlan] = None) -> CostReport:
    """One unbiased estimate of E_pi[phi].

    method 'osl': geometric debiasing over accuracy-indexed MLMC runs of
    the time-shifted coupled sampler.  method 'dissipative': the inner
    runs are spring-coupled MLMC at horizon T(sigma) = T_base +
    c_T ln(1/sigma).  ``plan`` carries the shared pilot; when absent a
    pilot is drawn from a child stream first.
    """
    if plan is None:
        plan = prepare_unbiased_plan(p, phi, method, cfg, rng.child(0xA110C))
        pilot_cost = plan.pilot_queries
    else:
        pilot_cost = 0
    if plan.method != method:
        raise ParameterError(f"plan was prepared for method '{plan.method}'")
    if method == "osl":
        proc = _osl_procedure(p, phi, cfg, plan)
    elif method == "dissipative":
        proc = _dissipative_procedure(p, phi, cfg, plan)
    else:
        raise ParameterError(f"unknown method '{method}' (use 'osl' or 'dissipative')")
    value, queries, j = geom_debias(proc, cfg.debias, rng)
    sig = cfg.debias.sigma_tilde
    return CostReport(
        estimate=value,
        est_variance=sig * sig,  # guaranteed bound, not a per-draw estimate
        classical_queries=int(queries) + pilot_cost,
        quantum_model_queries=plan.quantum_model_queries,
        per_level=[(j, sig, value, sig * sig, float(queries))],
    )
