"""Euler-Maruyama stepping for overdamped Langevin dynamics.

Single paths and same-noise coupled fine/coarse pairs.  The coarse path
of a coupled pair uses step 2h and is driven by the exact sum of the
two fine Brownian increments, so its trajectory can be reconstructed
bit-for-bit from the fine noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ParameterError
from .rng import RngStream

SQRT2 = math.sqrt(2.0)

__all__ = [
    "PathConfig",
    "CoupledEndpoints",
    "gaussian_increment",
    "em_step",
    "split_horizon",
    "simulate_path",
    "simulate_horizon",
    "path_endpoints_batch",
    "simulate_coupled",
    "coupled_batch",
]


@dataclass(frozen=True)
class PathConfig:
    """One Euler-Maruyama run: n_steps steps of size h from x0."""

    h: float
    n_steps: int
    x0: np.ndarray

    def __post_init__(self):
        if self.h <= 0:
            raise ParameterError(f"step size must be positive, got {self.h}")
        if self.n_steps < 0:
            raise ParameterError("n_steps must be nonnegative")


@dataclass(frozen=True)
class CoupledEndpoints:
    x_fine: np.ndarray
    x_coarse: np.ndarray
    grad_queries: int


def gaussian_increment(rng: RngStream, d: int, h: float) -> np.ndarray:
    """One Brownian increment, N(0, h I_d); advances the stream counter by d."""
    if h <= 0:
        raise ParameterError(f"step size must be positive, got {h}")
    return math.sqrt(h) * rng.normal(d)


def em_step(x: np.ndarray, g: np.ndarray, h: float, dW: np.ndarray) -> np.ndarray:
    """x - h * grad f(x) + sqrt(2) * dW, with dW ~ N(0, h I)."""
    return np.asarray(x, dtype=np.float64) - h * np.asarray(g, dtype=np.float64) + SQRT2 * np.asarray(dW, dtype=np.float64)


def split_horizon(T: float, h: float) -> list[tuple[float, int]]:
    """Segments (step, count) covering horizon T.

    T is covered by floor(T/h) steps of h plus one remainder step of
    T - N h when T is not on the step grid.
    """
    if h <= 0 or T < 0:
        raise ParameterError(f"need h > 0 and T >= 0, got h={h}, T={T}")
    n = int(math.floor(T / h + 1e-9))
    rem = T - n * h
    segments = [(h, n)] if n > 0 else []
    if rem > 1e-9 * max(1.0, T):
        segments.append((rem, 1))
    return segments


def _keys_for(rng: RngStream, n_paths: int | None):
    if n_paths is None:
        from .rng import stream_keys

        ids = np.array([rng.stream_id], dtype=np.uint64)
        return stream_keys(rng.seed, ids)
    from .rng import stream_keys

    return stream_keys(rng.seed, rng.child_ids(n_paths))


def simulate_path(p, cfg: PathConfig, rng: RngStream) -> tuple[np.ndarray, int]:
    """Endpoint of one EM path and its gradient-query count (= n_steps)."""
    k1, k2 = _keys_for(rng, None)
    x = kernels.em_endpoints(p, np.atleast_1d(np.asarray(cfg.x0, dtype=np.float64)), cfg.h, cfg.n_steps, k1, k2)
    return x[0], cfg.n_steps


def simulate_horizon(p, T: float, h: float, x0, rng: RngStream) -> tuple[np.ndarray, int]:
    """EM endpoint over horizon T with the remainder rule applied."""
    k1, k2 = _keys_for(rng, None)
    x = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    queries = 0
    counter0 = 0
    d = x.shape[1]
    for step, count in split_horizon(T, h):
        x = kernels.em_endpoints(p, x, step, count, k1, k2, counter0)
        counter0 += count * d
        queries += count
    return x[0], queries


def path_endpoints_batch(p, T: float, h: float, x0, rng: RngStream, n_paths: int) -> tuple[np.ndarray, int]:
    """Endpoints of n_paths independent EM paths (one child stream each).

    Returns (endpoints (n, d), grad queries per path).
    """
    k1, k2 = _keys_for(rng, n_paths)
    x = np.asarray(x0, dtype=np.float64)
    queries = 0
    counter0 = 0
    d = x.shape[-1]
    for step, count in split_horizon(T, h):
        x = kernels.em_endpoints(p, x, step, count, k1, k2, counter0)
        counter0 += count * d
        queries += count
    if queries == 0:
        x = np.tile(np.atleast_1d(x), (n_paths, 1)) if x.ndim == 1 else x
    return x, queries


def simulate_coupled(p, h: float, N: int, x0_fine, x0_coarse, rng: RngStream) -> CoupledEndpoints:
    """Same-noise coupled pair: 2N fine steps of h, N coarse steps of 2h."""
    if h <= 0:
        raise ParameterError(f"step size must be positive, got {h}")
    k1, k2 = _keys_for(rng, None)
    xf, xc, _, _ = kernels.spring_coupled_endpoints(
        p,
        np.atleast_1d(np.asarray(x0_fine, dtype=np.float64)),
        np.atleast_1d(np.asarray(x0_coarse, dtype=np.float64)),
        0.0,
        h,
        N,
        k1,
        k2,
    )
    return CoupledEndpoints(xf[0], xc[0], 3 * N)


def coupled_batch(p, h: float, N: int, x0_fine, x0_coarse, rng: RngStream, n_paths: int, counter0: int = 0, x_init_fine=None):
    """Batch version of simulate_coupled; per-path child streams.

    ``x_init_fine`` optionally supplies per-path fine starting states
    (used by the time-shifted sampler after its pre-evolution stage).
    Returns (x_fine (n,d), x_coarse (n,d)).
    """
    k1, k2 = _keys_for(rng, n_paths)
    xf0 = np.asarray(x0_fine if x_init_fine is None else x_init_fine, dtype=np.float64)
    xf, xc, _, _ = kernels.spring_coupled_endpoints(
        p, xf0, np.asarray(x0_coarse, dtype=np.float64), 0.0, h, N, k1, k2, counter0
    )
    return xf, xc
