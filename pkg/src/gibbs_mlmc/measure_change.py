"""Spring-coupled fine/coarse simulation under a change of measure.

A spring drift S(y_other - y_self) pulls the coupled paths together;
the accumulated per-step Radon-Nikodym derivatives R^f, R^c reweight
the endpoint observables back to the plain (spring-free) dynamics, so

    E[phi(y^f) R^f] - E[phi(y^c) R^c]

is an ordinary fine-minus-coarse level correction while the paths stay
uniformly close.  Weights accumulate in log space; a run whose log
weight leaves +-700 fails loudly rather than saturating.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ParameterError
from .potentials import Observable
from .rng import RngStream, stream_keys

__all__ = [
    "SpringConfig",
    "WeightedLevelSample",
    "rn_step_log",
    "default_spring_coefficient",
    "spring_level_sample",
    "spring_level_batch",
    "spring_fine_endpoints_batch",
    "spring_variance_scan",
]


@dataclass(frozen=True)
class SpringConfig:
    """Spring coefficient, fine step, coarse step count and common start."""

    S: float
    h: float
    N: int
    x0: np.ndarray

    def __post_init__(self):
        if self.S < 0:
            raise ParameterError(f"spring coefficient must be nonnegative, got {self.S}")
        if self.h <= 0:
            raise ParameterError(f"step size must be positive, got {self.h}")
        if self.N < 0:
            raise ParameterError("N must be nonnegative")
        if self.S * self.h >= 1.0:
            raise ParameterError(f"stability requires S*h < 1, got {self.S * self.h}")

    def validate_against(self, p) -> None:
        lam = p.constants.weak_osl_lambda
        if lam is None:
            raise ParameterError(
                f"potential '{p.name}' declares no weak one-sided Lipschitz constant; "
                "pass allow_unvalidated_spring=True to skip the S > lambda/2 check"
            )
        if not self.S > lam / 2.0 and self.S != 0.0:
            raise ParameterError(f"spring coefficient S={self.S} must exceed lambda/2={lam / 2.0}")


@dataclass(frozen=True)
class WeightedLevelSample:
    delta: float
    log_rf: float
    log_rc: float
    grad_queries: int
    x_fine: np.ndarray
    x_coarse: np.ndarray
    phi_fine: float
    phi_coarse: float


def rn_step_log(dW: np.ndarray, spring: np.ndarray, h: float) -> float:
    """Log of the single-step Radon-Nikodym derivative.

    dW is the N(0, h I) Brownian increment of the step and ``spring``
    the drift vector removed by the change of measure:
    log R = -(sqrt2/2) <dW, S> - ||S||^2 h / 4.
    """
    dW = np.asarray(dW, dtype=np.float64)
    spring = np.asarray(spring, dtype=np.float64)
    return float(-(math.sqrt(2.0) / 2.0) * np.dot(dW, spring) - 0.25 * np.dot(spring, spring) * h)


def default_spring_coefficient(p) -> float:
    """max(lambda, 1): strictly above the lambda/2 threshold with margin."""
    lam = p.constants.weak_osl_lambda
    if lam is None:
        raise ParameterError(f"potential '{p.name}' declares no weak one-sided Lipschitz constant")
    return max(lam, 1.0)


def spring_level_sample(p, phi: Observable, cfg: SpringConfig, rng: RngStream, allow_unvalidated_spring: bool = False) -> WeightedLevelSample:
    """One weighted level correction Delta = phi(y^f) R^f - phi(y^c) R^c."""
    if not allow_unvalidated_spring and cfg.S != 0.0:
        cfg.validate_against(p)
    ids = np.array([rng.stream_id], dtype=np.uint64)
    k1, k2 = stream_keys(rng.seed, ids)
    x0 = np.atleast_1d(np.asarray(cfg.x0, dtype=np.float64))
    xf, xc, log_rf, log_rc = kernels.spring_coupled_endpoints(p, x0, x0, cfg.S, cfg.h, cfg.N, k1, k2)
    pf = float(phi(xf[0]))
    pc = float(phi(xc[0]))
    delta = pf * math.exp(log_rf[0]) - pc * math.exp(log_rc[0])
    return WeightedLevelSample(
        delta=delta,
        log_rf=float(log_rf[0]),
        log_rc=float(log_rc[0]),
        grad_queries=3 * cfg.N,
        x_fine=xf[0],
        x_coarse=xc[0],
        phi_fine=pf,
        phi_coarse=pc,
    )


def spring_level_batch(p, phi: Observable, S: float, h: float, N: int, x0, rng: RngStream, n_samples: int, counter0: int = 0):
    """Vectorized level corrections over independent child streams.

    Returns (delta (n,), log_rf (n,), log_rc (n,)); 3N gradient queries
    per sample.
    """
    k1, k2 = stream_keys(rng.seed, rng.child_ids(n_samples))
    x0 = np.asarray(x0, dtype=np.float64)
    xf, xc, log_rf, log_rc = kernels.spring_coupled_endpoints(p, x0, x0, S, h, N, k1, k2, counter0)
    delta = phi(xf) * np.exp(log_rf) - phi(xc) * np.exp(log_rc)
    return delta, log_rf, log_rc


def spring_fine_endpoints_batch(p, S: float, h: float, N: int, x0, rng: RngStream, n_samples: int):
    """Fine endpoints and their log R^f weights (weighted-sampling view)."""
    k1, k2 = stream_keys(rng.seed, rng.child_ids(n_samples))
    x0 = np.asarray(x0, dtype=np.float64)
    xf, _, log_rf, _ = kernels.spring_coupled_endpoints(p, x0, x0, S, h, N, k1, k2)
    return xf, log_rf


def spring_variance_scan(p, phi: Observable, S: float, h_list, T: float, n_pilot: int, rng: RngStream):
    """Empirical Var(Delta) for each step size in h_list at horizon T."""
    if n_pilot < 2:
        raise ParameterError("n_pilot must be at least 2")
    out = []
    for i, h in enumerate(h_list):
        N = T / (2.0 * h)
        if abs(N - round(N)) > 1e-9:
            raise ParameterError(f"h={h} does not divide T/2={T / 2.0} evenly")
        delta, _, _ = spring_level_batch(p, phi, S, h, int(round(N)), np.zeros(p.dim), rng.child(i), n_pilot)
        out.append((float(h), float(np.var(delta, ddof=1))))
    return out
