"""Target energies f with analytic gradients and regularity metadata.

All evaluation functions are vectorized over a leading batch axis:
``value`` maps (..., d) -> (...,) and ``grad`` maps (..., d) -> (..., d).
Gradients are hand-coded (no autodiff) so they can be validated against
central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NumericError, ParameterError
from .rng import HAVE_NUMBA, RngStream

__all__ = [
    "RegularityInfo",
    "RadialProfile",
    "Potential",
    "Observable",
    "CountingPotential",
    "make_potential",
    "make_observable",
    "check_gradient",
    "synthetic_classification_data",
    "synthetic_regression_data",
    "BUILTIN_POTENTIALS",
]


@dataclass(frozen=True)
class RegularityInfo:
    """Regularity constants declared for a potential.

    Absent fields mean the corresponding condition is not guaranteed.
    ``dissipative`` is an ``(a, b)`` pair with ``<x, grad f(x)> >= a|x|^2 - b``.
    ``grad0_norm`` records |grad f(0)| (informational, never enforced).
    """

    smooth_L: Optional[float] = None
    hessian_L: Optional[float] = None
    osl_m: Optional[float] = None
    weak_osl_lambda: Optional[float] = None
    dissipative: Optional[tuple[float, float]] = None
    grad0_norm: float = 0.0


@dataclass(frozen=True)
class RadialProfile:
    """Radial section u(r) = f(r e_1) of an isotropic potential with derivatives."""

    value: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray], np.ndarray]
    d3: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Potential:
    name: str
    dim: int
    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    constants: RegularityInfo = field(default_factory=RegularityInfo)
    radial: Optional[RadialProfile] = None
    # compiled gradient (params, x_row, out_row) used by the batch kernels
    njit_grad: Optional[Callable] = field(default=None, repr=False, compare=False)
    njit_params: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __repr__(self):
        return f"Potential({self.name}, d={self.dim})"


@dataclass(frozen=True)
class Observable:
    """Scalar observable phi with declared Lipschitz constant and bound."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    lipschitz_K: float
    abs_bound: float

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.fn(x)


class CountingPotential:
    """Wraps a potential and counts gradient queries at the oracle boundary.

    One query = one gradient evaluation at one point, so a batched call
    over n points adds n.  Value calls are free (the cost unit of every
    algorithm here is gradient queries).
    """

    def __init__(self, base: Potential):
        self.base = base
        self.queries = 0

    @property
    def name(self):
        return self.base.name

    @property
    def dim(self):
        return self.base.dim

    @property
    def constants(self):
        return self.base.constants

    @property
    def radial(self):
        return self.base.radial

    @property
    def njit_grad(self):
        return self.base.njit_grad

    @property
    def njit_params(self):
        return self.base.njit_params

    def value(self, x):
        return self.base.value(x)

    def grad(self, x):
        x = np.asarray(x)
        self.queries += int(np.prod(x.shape[:-1])) if x.ndim > 1 else 1
        return self.base.grad(x)

    def add_queries(self, n: int):
        self.queries += int(n)


def _sq_norm(x):
    return np.sum(np.square(x), axis=-1)


# ---------------------------------------------------------------------------
# builtin potentials
# ---------------------------------------------------------------------------


def _quadratic(d: int) -> Potential:
    if d < 1:
        raise ParameterError("quadratic: d must be >= 1")

    def value(x):
        return 0.5 * _sq_norm(x)

    def grad(x):
        return np.array(x, dtype=np.float64, copy=True)

    radial = RadialProfile(
        value=lambda r: 0.5 * np.square(r),
        d1=lambda r: np.asarray(r, dtype=np.float64) + 0.0,
        d2=lambda r: np.ones_like(np.asarray(r, dtype=np.float64)),
        d3=lambda r: np.zeros_like(np.asarray(r, dtype=np.float64)),
    )
    info = RegularityInfo(
        smooth_L=1.0,
        hessian_L=0.0,
        osl_m=1.0,
        weak_osl_lambda=0.0,
        dissipative=(0.5, 1.0),
    )
    return Potential("quadratic", d, value, grad, info, radial)


def _oscillatory(d: int) -> Potential:
    if d < 1:
        raise ParameterError("oscillatory: d must be >= 1")

    def value(x):
        x = np.asarray(x, dtype=np.float64)
        return 0.5 * _sq_norm(x) - 2.0 * np.cos(x[..., 0])

    def grad(x):
        x = np.asarray(x, dtype=np.float64)
        g = np.array(x, copy=True)
        g[..., 0] += 2.0 * np.sin(x[..., 0])
        return g

    # Hessian eigenvalues are 1 + 2cos(x1) in [-1, 3] and 1 elsewhere.
    info = RegularityInfo(
        smooth_L=3.0,
        hessian_L=2.0,
        weak_osl_lambda=1.0,
        dissipative=(0.5, 2.0),
    )
    return Potential("oscillatory", d, value, grad, info)


def _radial_gauss(d: int, a: float) -> Potential:
    if a <= math.e / 2.0:
        raise ParameterError(f"radial_gauss: requires a > e/2 = {math.e / 2.0:.6f}, got {a}")

    def value(x):
        r2 = _sq_norm(x)
        return 0.5 * r2 - a * np.exp(-r2)

    def grad(x):
        x = np.asarray(x, dtype=np.float64)
        r2 = _sq_norm(x)
        return (1.0 + 2.0 * a * np.exp(-r2))[..., None] * x

    def _p(r):
        return np.asarray(r, dtype=np.float64)

    radial = RadialProfile(
        value=lambda r: 0.5 * np.square(_p(r)) - a * np.exp(-np.square(_p(r))),
        d1=lambda r: _p(r) + 2.0 * a * _p(r) * np.exp(-np.square(_p(r))),
        d2=lambda r: 1.0 + 2.0 * a * np.exp(-np.square(_p(r))) * (1.0 - 2.0 * np.square(_p(r))),
        d3=lambda r: 2.0 * a * np.exp(-np.square(_p(r))) * (4.0 * _p(r) ** 3 - 6.0 * _p(r)),
    )
    # Hessian eigenvalues lie in [1 - 4a e^{-3/2}, 1 + 2a]; |u'''| <= 3.9a.
    info = RegularityInfo(
        smooth_L=1.0 + 2.0 * a,
        hessian_L=4.0 * a,
        weak_osl_lambda=max(0.0, 4.0 * a * math.exp(-1.5) - 1.0),
        dissipative=(1.0, 1.0),
    )
    return Potential("radial_gauss", d, value, grad, info, radial)


def _student_t(d: int, kappa: float) -> Potential:
    if kappa <= 0:
        raise ParameterError(f"student_t: kappa must be positive, got {kappa}")
    c = 0.5 * (d + kappa)

    def value(x):
        return c * np.log1p(_sq_norm(x))

    def grad(x):
        x = np.asarray(x, dtype=np.float64)
        return (2.0 * c / (1.0 + _sq_norm(x)))[..., None] * x

    def _p(r):
        return np.asarray(r, dtype=np.float64)

    radial = RadialProfile(
        value=lambda r: c * np.log1p(np.square(_p(r))),
        d1=lambda r: 2.0 * c * _p(r) / (1.0 + np.square(_p(r))),
        d2=lambda r: 2.0 * c * (1.0 - np.square(_p(r))) / np.square(1.0 + np.square(_p(r))),
        d3=lambda r: 4.0 * c * _p(r) * (np.square(_p(r)) - 3.0) / (1.0 + np.square(_p(r))) ** 3,
    )
    # Heavy tailed: not dissipative, not one-sided Lipschitz.
    info = RegularityInfo(
        smooth_L=d + kappa,
        hessian_L=1.5 * (d + kappa),
        weak_osl_lambda=(d + kappa) / 8.0,
    )
    return Potential("student_t", d, value, grad, info, radial)


def _sigmoid(z):
    # numerically stable logistic function
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _logistic_regression(x_data: np.ndarray, y_data: np.ndarray, precision: np.ndarray) -> Potential:
    X = np.asarray(x_data, dtype=np.float64)
    y = np.asarray(y_data, dtype=np.float64)
    n, d = X.shape
    lam = np.asarray(precision, dtype=np.float64)
    if lam.ndim == 0:
        lam = float(lam) * np.eye(d)
    if lam.shape != (d, d):
        raise ParameterError("logistic_regression: precision must be scalar or (d, d)")
    evals = np.linalg.eigvalsh(lam)
    if evals[0] <= 0:
        raise ParameterError("logistic_regression: precision matrix must be positive definite")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ParameterError("logistic_regression: labels must be in {-1, +1}")

    def value(w):
        w = np.asarray(w, dtype=np.float64)
        z = (w @ X.T) * y  # (..., n)
        quad = 0.5 * np.einsum("...i,ij,...j->...", w, lam, w)
        return quad + np.sum(np.logaddexp(0.0, -z), axis=-1)

    def grad(w):
        w = np.asarray(w, dtype=np.float64)
        z = (w @ X.T) * y
        s = _sigmoid(-z)  # (..., n)
        return w @ lam.T - (s * y) @ X

    R = float(np.max(np.linalg.norm(X, axis=1)))
    m = float(evals[0])
    M = float(evals[-1])
    sum_norm = float(np.sum(np.linalg.norm(X, axis=1)))
    info = RegularityInfo(
        smooth_L=M + n * R**2 / 4.0,
        hessian_L=n * R**3 / (6.0 * math.sqrt(3.0)),
        osl_m=m,
        weak_osl_lambda=0.0,
        dissipative=(m / 2.0, sum_norm**2 / (2.0 * m)),
        grad0_norm=float(np.linalg.norm(grad(np.zeros(d)))),
    )
    return Potential("logistic_regression", d, value, grad, info)


def _gaussian_mixture_logistic(
    x_data: np.ndarray,
    y_data: np.ndarray,
    means: np.ndarray,
    weights: np.ndarray,
    precision: np.ndarray,
) -> Potential:
    X = np.asarray(x_data, dtype=np.float64)
    y = np.asarray(y_data, dtype=np.float64)
    mk = np.atleast_2d(np.asarray(means, dtype=np.float64))  # (K, d)
    pk = np.asarray(weights, dtype=np.float64)
    n, d = X.shape
    K = mk.shape[0]
    if mk.shape[1] != d:
        raise ParameterError("gaussian_mixture_logistic: means must be (K, d)")
    if pk.shape != (K,) or np.any(pk <= 0) or not math.isclose(float(pk.sum()), 1.0, rel_tol=1e-9):
        raise ParameterError("gaussian_mixture_logistic: weights must be positive and sum to 1")
    lam = np.asarray(precision, dtype=np.float64)
    if lam.ndim == 0:
        lam = float(lam) * np.eye(d)
    evals = np.linalg.eigvalsh(lam)
    if evals[0] <= 0:
        raise ParameterError("gaussian_mixture_logistic: precision matrix must be positive definite")
    log_pk = np.log(pk)

    def _log_terms(w):
        # (..., K) log of p_k exp(-0.5 (w-m_k)' lam (w-m_k))
        diff = w[..., None, :] - mk  # (..., K, d)
        quad = 0.5 * np.einsum("...ki,ij,...kj->...k", diff, lam, diff)
        return log_pk - quad

    def value(w):
        w = np.asarray(w, dtype=np.float64)
        lt = _log_terms(w)
        mix = -_logsumexp(lt)
        z = (w @ X.T) * y
        return mix + np.sum(np.logaddexp(0.0, -z), axis=-1)

    def grad(w):
        w = np.asarray(w, dtype=np.float64)
        lt = _log_terms(w)
        pi = np.exp(lt - _logsumexp(lt)[..., None])  # (..., K)
        mbar = pi @ mk  # (..., d)
        gm = (w - mbar) @ lam.T
        z = (w @ X.T) * y
        s = _sigmoid(-z)
        return gm - (s * y) @ X

    R = float(np.max(np.linalg.norm(X, axis=1)))
    Mnorm = float(np.max(np.linalg.norm(mk, axis=1)))
    m = float(evals[0])
    M = float(evals[-1])
    spread = 2.0 * Mnorm
    # mixture Hessian lies in [lam - spread^2 lam^2, lam]
    info = RegularityInfo(
        smooth_L=max(M, spread**2 * M**2 - m) + n * R**2 / 4.0,
        hessian_L=None,  # no computable Lipschitz-Hessian constant for the mixture
        weak_osl_lambda=max(0.0, spread**2 * M**2 - m),
        dissipative=(m / 4.0, M**2 * Mnorm**2 / (2.0 * m) + (n * R) ** 2 / m),
    )
    return Potential("gaussian_mixture_logistic", d, value, grad, info)


def _logsumexp(a):
    amax = np.max(a, axis=-1)
    return amax + np.log(np.sum(np.exp(a - amax[..., None]), axis=-1))


# max over s of |s e^{-s^2/2} (3 - s^2)|, attained at s^2 = 3 - sqrt(6)
_WELSCH_C3 = float(
    max(
        abs(s * math.exp(-s * s / 2.0) * (3.0 - s * s))
        for s in (math.sqrt(3.0 - math.sqrt(6.0)), math.sqrt(3.0 + math.sqrt(6.0)))
    )
)


def _welsch(x_data: np.ndarray, y_data: np.ndarray, sigma: float, lambda0: float) -> Potential:
    X = np.asarray(x_data, dtype=np.float64)
    y = np.asarray(y_data, dtype=np.float64)
    n, d = X.shape
    if sigma <= 0 or lambda0 <= 0:
        raise ParameterError("welsch: sigma and lambda0 must be positive")
    s2 = sigma * sigma

    def value(w):
        w = np.asarray(w, dtype=np.float64)
        t = y - w @ X.T  # (..., n)
        loss = np.mean(1.0 - np.exp(-np.square(t) / (2.0 * s2)), axis=-1)
        return loss + 0.5 * lambda0 * _sq_norm(w)

    def grad(w):
        w = np.asarray(w, dtype=np.float64)
        t = y - w @ X.T
        phi1 = (t / s2) * np.exp(-np.square(t) / (2.0 * s2))
        return -(phi1 @ X) / n + lambda0 * w

    R = float(max(np.max(np.linalg.norm(X, axis=1)), np.max(np.abs(y))))
    # |phi'| <= e^{-1/2}/sigma, |phi''| <= 1/sigma^2, |phi'''| <= C3/sigma^3
    phi2max = 2.0 * math.exp(-1.5) / s2
    info = RegularityInfo(
        smooth_L=lambda0 + R**2 / s2,
        hessian_L=_WELSCH_C3 * R**3 / sigma**3,
        osl_m=(lambda0 - phi2max * R**2) if lambda0 > phi2max * R**2 else None,
        weak_osl_lambda=max(0.0, phi2max * R**2 - lambda0),
        dissipative=(lambda0 / 2.0, R**2 * math.exp(-1.0) / (2.0 * lambda0 * s2)),
        grad0_norm=float(np.linalg.norm(grad(np.zeros(d)))),
    )
    return Potential("welsch", d, value, grad, info)


def _cosine_well(d: int, lambda0: float) -> Potential:
    if d < 1 or lambda0 <= 0:
        raise ParameterError("cosine_well: need d >= 1 and lambda0 > 0")
    sd = math.sqrt(float(d))

    def value(x):
        x = np.asarray(x, dtype=np.float64)
        return 0.5 * _sq_norm(x) + lambda0 * np.sum(np.cos(x / sd), axis=-1)

    def grad(x):
        x = np.asarray(x, dtype=np.float64)
        return x - (lambda0 / sd) * np.sin(x / sd)

    # Hessian eigenvalues 1 - (lambda0/d) cos(x_i/sqrt d)
    info = RegularityInfo(
        smooth_L=1.0 + lambda0,
        hessian_L=lambda0 / sd,
        osl_m=(1.0 - lambda0 / d) if lambda0 < d else None,
        weak_osl_lambda=max(0.0, lambda0 / d - 1.0),
        dissipative=(0.5, 0.5 * lambda0**2 * d),
    )
    return Potential("cosine_well", d, value, grad, info)


# ---------------------------------------------------------------------------
# fixed synthetic datasets for the data-driven potentials
# ---------------------------------------------------------------------------

_DATA_SEED = 0x5EED_DA7A


def synthetic_classification_data(n: int = 20, d: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (X, y) with y in {-1, +1}, |x_i| = O(1)."""
    rs = RngStream(_DATA_SEED, stream_id=1)
    X = rs.normal((n, d)) / math.sqrt(d)
    w_true = np.arange(1, d + 1, dtype=np.float64) / d
    margin = X @ w_true + 0.3 * rs.normal(n)
    y = np.where(margin >= 0, 1.0, -1.0)
    return X, y


def synthetic_regression_data(n: int = 20, d: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (X, y) with real-valued responses and a few outliers."""
    rs = RngStream(_DATA_SEED, stream_id=2)
    X = rs.normal((n, d)) / math.sqrt(d)
    w_true = np.linspace(-1.0, 1.0, d)
    y = X @ w_true + 0.2 * rs.normal(n)
    y[::7] += 2.5  # heavy-tailed contamination
    return X, y


# ---------------------------------------------------------------------------
# factory
# ---------------------------------------------------------------------------


def make_potential(name: str, **params) -> Potential:
    """Build a named potential.

    Supported names and parameters:
      quadratic(d), oscillatory(d), radial_gauss(d, a), student_t(d, kappa),
      logistic_regression(x_data, y_data, precision),
      gaussian_mixture_logistic(x_data, y_data, means, weights, precision),
      welsch(x_data, y_data, sigma, lambda0), cosine_well(d, lambda0).

    Data-driven potentials fall back to the shipped synthetic dataset when
    x_data/y_data are omitted.
    """
    try:
        builder = BUILTIN_POTENTIALS[name]
    except KeyError:
        raise ParameterError(f"unknown potential '{name}' (known: {sorted(BUILTIN_POTENTIALS)})") from None
    try:
        p = builder(**params)
    except TypeError as exc:
        raise ParameterError(f"potential '{name}': {exc}") from None
    nj = _NJIT_GRADS.get(name)
    if nj is not None:
        from dataclasses import replace

        p = replace(p, njit_grad=nj, njit_params=np.empty(0))
    return p


def _with_default_classification(fn):
    def build(x_data=None, y_data=None, **kw):
        if x_data is None or y_data is None:
            x_data, y_data = synthetic_classification_data()
        return fn(x_data, y_data, **kw)

    return build


def _with_default_regression(fn):
    def build(x_data=None, y_data=None, **kw):
        if x_data is None or y_data is None:
            x_data, y_data = synthetic_regression_data()
        return fn(x_data, y_data, **kw)

    return build


def _build_mixture(x_data=None, y_data=None, means=None, weights=None, precision=1.0):
    if x_data is None or y_data is None:
        x_data, y_data = synthetic_classification_data()
    d = np.asarray(x_data).shape[1]
    if means is None:
        means = np.stack([np.full(d, -1.0), np.full(d, 1.0)])
    if weights is None:
        weights = np.full(len(means), 1.0 / len(means))
    return _gaussian_mixture_logistic(x_data, y_data, means, weights, precision)


if HAVE_NUMBA:
    import numba as _nb

    @_nb.njit(inline="always", cache=True)
    def _njit_grad_quadratic(params, x, out):
        for j in range(x.shape[0]):
            out[j] = x[j]

    @_nb.njit(inline="always", cache=True)
    def _njit_grad_oscillatory(params, x, out):
        for j in range(x.shape[0]):
            out[j] = x[j]
        out[0] = x[0] + 2.0 * math.sin(x[0])

    _NJIT_GRADS = {
        "quadratic": _njit_grad_quadratic,
        "oscillatory": _njit_grad_oscillatory,
    }
else:  # pragma: no cover
    _NJIT_GRADS = {}


BUILTIN_POTENTIALS = {
    "quadratic": lambda d=1: _quadratic(int(d)),
    "oscillatory": lambda d=2: _oscillatory(int(d)),
    "radial_gauss": lambda d=2, a=2.0: _radial_gauss(int(d), float(a)),
    "student_t": lambda d=1, kappa=3.0: _student_t(int(d), float(kappa)),
    "logistic_regression": _with_default_classification(
        lambda X, y, precision=1.0: _logistic_regression(X, y, precision)
    ),
    "gaussian_mixture_logistic": _build_mixture,
    "welsch": _with_default_regression(
        lambda X, y, sigma=1.0, lambda0=0.5: _welsch(X, y, float(sigma), float(lambda0))
    ),
    "cosine_well": lambda d=2, lambda0=1.0: _cosine_well(int(d), float(lambda0)),
}


# ---------------------------------------------------------------------------
# observables
# ---------------------------------------------------------------------------


def make_observable(name: str, **params) -> Observable:
    """Build a named observable: cos, tanh (of one coordinate) or const."""
    if name == "cos":
        j = int(params.get("index", 0))
        return Observable(f"cos_x{j}", lambda x: np.cos(np.asarray(x, dtype=np.float64)[..., j]), 1.0, 1.0)
    if name == "tanh":
        j = int(params.get("index", 0))
        return Observable(f"tanh_x{j}", lambda x: np.tanh(np.asarray(x, dtype=np.float64)[..., j]), 1.0, 1.0)
    if name == "const":
        c = float(params.get("value", 1.0))
        return Observable(
            f"const_{c:g}",
            lambda x: np.full(np.asarray(x).shape[:-1], c, dtype=np.float64),
            1e-12,
            abs(c),
        )
    raise ParameterError(f"unknown observable '{name}' (known: cos, tanh, const)")


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def check_gradient(p: Potential, x: np.ndarray, fd_step: float = 1e-5) -> float:
    """Max relative error between central differences of value and grad.

    The error is measured per coordinate relative to max(1, |grad f(x)|).
    """
    if not (0.0 < fd_step <= 1e-2):
        raise ParameterError(f"fd_step must lie in (0, 1e-2], got {fd_step}")
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericError("check_gradient: non-finite input point")
    g = np.asarray(p.grad(x), dtype=np.float64)
    scale = max(1.0, float(np.linalg.norm(g)))
    worst = 0.0
    for i in range(x.shape[-1]):
        xp = x.copy()
        xm = x.copy()
        xp[i] += fd_step
        xm[i] -= fd_step
        fd = (float(p.value(xp)) - float(p.value(xm))) / (2.0 * fd_step)
        if not math.isfinite(fd):
            raise NumericError("check_gradient: non-finite finite-difference value")
        worst = max(worst, abs(fd - float(g[i])) / scale)
    return worst
