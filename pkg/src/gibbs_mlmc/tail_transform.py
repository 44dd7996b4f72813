"""Heavy-tail transformation machinery.

A radial map h(x) = g(|x|) x/|x| with g blending the identity into
r^alpha exp(b r^beta) turns a heavy-tailed target exp(-f) into a
light-tailed one exp(-f_h) with

    f_h(x) = f(g(r)) - log g'(r) - (d-1) log g(r) + (d-1) log r .

The blend uses a degree-7 bump polynomial whose first three derivatives
vanish at both junctions, so g is C^3 and the transformed gradient and
Hessian formulas stay valid across the blend region.  Inside |x| < R1
the transform is the identity and f_h coincides with f exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .errors import IsotropyError, ParameterError
from .potentials import Potential, RadialProfile, RegularityInfo
from .rng import RngStream, stream_keys

__all__ = [
    "TransformParams",
    "chi",
    "g_eval",
    "g_derivs",
    "g_deriv",
    "g_inverse",
    "h_map",
    "h_inverse",
    "TransformedPotential",
    "assumption_scan",
    "transformed_langevin_sample",
    "transformed_langevin_batch",
]

_EXP_LIMIT = 700.0


@dataclass(frozen=True)
class TransformParams:
    """Parameters (alpha, b, beta_exp, R1, R2) of the radial map g."""

    alpha: float = 0.0
    b: float = 1.0
    beta_exp: float = 2.0
    R1: float = 1.0
    R2: float = 2.0

    def __post_init__(self):
        if self.alpha < 0 or self.b < 0:
            raise ParameterError("alpha and b must be nonnegative")
        if self.alpha == 0 and self.b == 0:
            raise ParameterError("alpha and b cannot both vanish")
        if self.b == 0 and self.alpha < 1:
            raise ParameterError("alpha >= 1 required when b = 0")
        if not (1.0 < self.beta_exp <= 2.0):
            raise ParameterError(f"beta_exp must lie in (1, 2], got {self.beta_exp}")
        if not (0.0 < self.R1 < self.R2):
            raise ParameterError(f"need 0 < R1 < R2, got R1={self.R1}, R2={self.R2}")
        # psi(r) >= r must hold on the blend region so g' > 0 there
        # (checked in log space to stay overflow-safe for large R1)
        if self._log_psi_ratio(self.R1) < 0.0:
            raise ParameterError(
                f"psi(R1) = R1^alpha exp(b R1^beta) < R1 at R1 = {self.R1}; "
                "the blend would not be monotone"
            )
        if self.alpha < 1.0 and self.b > 0:
            rstar = ((1.0 - self.alpha) / (self.b * self.beta_exp)) ** (1.0 / self.beta_exp)
            if self.R1 < rstar < self.R2 and self._log_psi_ratio(rstar) < 0.0:
                raise ParameterError(
                    f"psi(r) dips below r at r = {rstar:.6g} inside the blend region"
                )

    def _log_psi_ratio(self, r: float) -> float:
        """log(psi(r) / r)."""
        return (self.alpha - 1.0) * math.log(r) + self.b * r**self.beta_exp


def chi(r, R1: float, R2: float):
    """Bump value and first three derivatives at radius r.

    chi is 1 on [0, R1], 0 on [R2, inf) and the degree-7 polynomial
    p(t) = 1 - 35 t^4 + 84 t^5 - 70 t^6 + 20 t^7 in t = (r-R1)/(R2-R1)
    between; p', p'', p''' vanish at both endpoints.
    """
    if not (0.0 < R1 < R2):
        raise ParameterError(f"need 0 < R1 < R2, got {R1}, {R2}")
    r = np.asarray(r, dtype=np.float64)
    w = R2 - R1
    t = np.clip((r - R1) / w, 0.0, 1.0)
    t2 = t * t
    t3 = t2 * t
    val = 1.0 + t3 * t * (-35.0 + t * (84.0 + t * (-70.0 + 20.0 * t)))
    d1 = t3 * (-140.0 + t * (420.0 + t * (-420.0 + 140.0 * t))) / w
    d2 = t2 * (-420.0 + t * (1680.0 + t * (-2100.0 + 840.0 * t))) / (w * w)
    d3 = t * (-840.0 + t * (5040.0 + t * (-8400.0 + 4200.0 * t))) / (w**3)
    inside = (r > R1) & (r < R2)
    val = np.where(r <= R1, 1.0, np.where(r >= R2, 0.0, val))
    d1 = np.where(inside, d1, 0.0)
    d2 = np.where(inside, d2, 0.0)
    d3 = np.where(inside, d3, 0.0)
    return val, d1, d2, d3


def _psi_derivs(r, params: TransformParams, order: int = 3):
    """psi = r^alpha exp(b r^beta) and derivatives via log-derivative chain."""
    r = np.asarray(r, dtype=np.float64)
    a, b, be = params.alpha, params.b, params.beta_exp
    expo = b * r**be
    if np.any(expo > _EXP_LIMIT):
        raise ParameterError(f"b * r^beta exceeds {_EXP_LIMIT}; psi overflows at r={np.max(r):.3g}")
    with np.errstate(divide="ignore"):
        psi = r**a * np.exp(expo)
    q = a / r + b * be * r ** (be - 1.0)
    d1 = psi * q
    if order == 1:
        return psi, d1, None, None
    qp = -a / (r * r) + b * be * (be - 1.0) * r ** (be - 2.0)
    d2 = psi * (q * q + qp)
    if order == 2:
        return psi, d1, d2, None
    qpp = 2.0 * a / r**3 + b * be * (be - 1.0) * (be - 2.0) * r ** (be - 3.0)
    d3 = psi * (q**3 + 3.0 * q * qp + qpp)
    return psi, d1, d2, d3


def g_derivs(r, params: TransformParams):
    """(g, g', g'', g''') at radius r >= 0, vectorized."""
    r = np.asarray(r, dtype=np.float64)
    scalar = r.ndim == 0
    r = np.atleast_1d(r)
    if np.any(r < 0):
        raise ParameterError("radius must be nonnegative")
    g = np.array(r, copy=True)
    d1 = np.ones_like(r)
    d2 = np.zeros_like(r)
    d3 = np.zeros_like(r)
    outer = r >= params.R1
    if np.any(outer):
        ro = r[outer]
        psi, p1, p2, p3 = _psi_derivs(ro, params)
        cv, c1, c2, c3 = chi(ro, params.R1, params.R2)
        u = ro - psi  # g = psi + chi * u
        u1 = 1.0 - p1
        u2 = -p2
        u3 = -p3
        g[outer] = psi + cv * u
        d1[outer] = p1 + c1 * u + cv * u1
        d2[outer] = p2 + c2 * u + 2.0 * c1 * u1 + cv * u2
        d3[outer] = p3 + c3 * u + 3.0 * c2 * u1 + 3.0 * c1 * u2 + cv * u3
    if scalar:
        return float(g[0]), float(d1[0]), float(d2[0]), float(d3[0])
    return g, d1, d2, d3


def g_eval(r, params: TransformParams):
    return g_derivs(r, params)[0]


def g_deriv(r, params: TransformParams, order: int):
    if order not in (1, 2, 3):
        raise ParameterError("order must be 1, 2 or 3")
    return g_derivs(r, params)[order]


def g_inverse(s, params: TransformParams):
    """Radius r with g(r) = s, by bisection (identity region closed form).

    |g(r) - s| <= 1e-12 max(1, s) at the returned point.
    """
    s_arr = np.asarray(s, dtype=np.float64)
    scalar = s_arr.ndim == 0
    s_arr = np.atleast_1d(s_arr)
    if np.any(s_arr < 0):
        raise ParameterError("g_inverse requires s >= 0")
    out = np.array(s_arr, copy=True)  # identity region
    outer = s_arr >= params.R1
    if np.any(outer):
        target = s_arr[outer]
        hi = np.full_like(target, max(params.R1, 1.0))
        for _ in range(200):
            vals = g_eval(hi, params)
            need = vals < target
            if not np.any(need):
                break
            hi[need] *= 2.0
        lo = np.zeros_like(target)
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            below = g_eval(mid, params) < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        out[outer] = 0.5 * (lo + hi)
    return float(out[0]) if scalar else out


def h_map(x, params: TransformParams):
    """Radial rescaling h(x) = g(|x|) x / |x| (0 at 0), batched over rows."""
    x = np.asarray(x, dtype=np.float64)
    r = np.linalg.norm(x, axis=-1)
    out = np.array(x, copy=True)
    mask = r > 0
    factor = np.ones_like(r)
    factor[mask] = g_eval(r[mask], params) / r[mask]
    return out * factor[..., None]


def h_inverse(y, params: TransformParams):
    y = np.asarray(y, dtype=np.float64)
    r = np.linalg.norm(y, axis=-1)
    out = np.array(y, copy=True)
    mask = r > 0
    factor = np.ones_like(r)
    factor[mask] = g_inverse(r[mask], params) / r[mask]
    return out * factor[..., None]


def _fd_profile(value_fn) -> RadialProfile:
    """Radial derivatives by central differences on the scalar profile."""

    def d1(r, h=1e-5):
        r = np.asarray(r, dtype=np.float64)
        return (value_fn(r + h) - value_fn(r - h)) / (2.0 * h)

    def d2(r, h=1e-4):
        r = np.asarray(r, dtype=np.float64)
        return (value_fn(r + h) - 2.0 * value_fn(r) + value_fn(r - h)) / (h * h)

    def d3(r, h=1e-3):
        r = np.asarray(r, dtype=np.float64)
        return (value_fn(r + 2 * h) - 2.0 * value_fn(r + h) + 2.0 * value_fn(r - h) - value_fn(r - 2 * h)) / (2.0 * h**3)

    return RadialProfile(value=value_fn, d1=d1, d2=d2, d3=d3)


class TransformedPotential:
    """Potential f_h induced by the radial map on an isotropic base.

    Exposes ``value``/``grad``/``dim`` like a plain potential, plus the
    Hessian eigenvalue formulas and the map itself.  For |x| < R1 both
    value and gradient delegate to the base exactly.
    """

    def __init__(self, base: Potential, params: TransformParams = TransformParams(), check_isotropy: bool = True):
        self.base = base
        self.params = params
        self.dim = base.dim
        self.name = f"{base.name}_h"
        if base.radial is not None:
            self.profile = base.radial
        else:

            def prof_value(r):
                r = np.atleast_1d(np.asarray(r, dtype=np.float64))
                pts = np.zeros((len(r), base.dim))
                pts[:, 0] = r
                return base.value(pts)

            self.profile = _fd_profile(prof_value)
        if check_isotropy:
            self._check_isotropy()
        self.njit_grad = None
        self.njit_params = None

    def _check_isotropy(self):
        rs = RngStream(0xF00D, 0)
        for _ in range(20):
            x = rs.normal(self.dim) * (0.2 + 3.0 * rs.uniform())
            e1 = np.zeros(self.dim)
            e1[0] = float(np.linalg.norm(x))
            fx = float(self.base.value(x))
            fr = float(self.base.value(e1))
            if abs(fx - fr) > 1e-10 * max(1.0, abs(fx)):
                raise IsotropyError(
                    f"potential '{self.base.name}' is not isotropic: f(x)={fx!r} vs f(|x| e1)={fr!r}"
                )

    # -- scalar radial pieces -------------------------------------------------

    def _fh_radial(self, r):
        g, g1, _, _ = g_derivs(r, self.params)
        d = self.dim
        return self.profile.value(g) - np.log(g1) - (d - 1) * np.log(g) + (d - 1) * np.log(r)

    def value(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xb = np.atleast_2d(x)
        r = np.linalg.norm(xb, axis=-1)
        inner = r < self.params.R1
        out = np.empty(r.shape, dtype=np.float64)
        if np.any(inner):
            out[inner] = self.base.value(xb[inner])
        if np.any(~inner):
            out[~inner] = self._fh_radial(r[~inner])
        return float(out[0]) if single else out

    def grad(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xb = np.atleast_2d(x)
        r = np.linalg.norm(xb, axis=-1)
        out = np.empty_like(xb)
        inner = r < self.params.R1
        if np.any(inner):
            out[inner] = self.base.grad(xb[inner])
        rest = ~inner
        if np.any(rest):
            ro = r[rest]
            g, g1, g2, _ = g_derivs(ro, self.params)
            coef = g1 * self.profile.d1(g) - g2 / g1 - (self.dim - 1) * g1 / g + (self.dim - 1) / ro
            out[rest] = (coef / ro)[:, None] * xb[rest]
        return out[0] if single else out

    def log_jacobian(self, r):
        """log det of the map's Jacobian at radius r: (d-1) log(g/r) + log g'."""
        g, g1, _, _ = g_derivs(r, self.params)
        return (self.dim - 1) * (np.log(g) - np.log(np.asarray(r, dtype=np.float64))) + np.log(g1)

    def hessian_eigs(self, r):
        """(radial, tangential) Hessian eigenvalues of f_h at radius r > 0."""
        r = np.asarray(r, dtype=np.float64)
        if np.any(r <= 0):
            raise ParameterError("hessian_eigs needs r > 0")
        g, g1, g2, g3 = g_derivs(r, self.params)
        d = self.dim
        f1 = self.profile.d1(g)
        f2 = self.profile.d2(g)
        lam_rad = (
            g1 * g1 * f2
            + g2 * f1
            - (g3 * g1 - g2 * g2) / (g1 * g1)
            - (d - 1) * (g2 * g - g1 * g1) / (g * g)
            - (d - 1) / (r * r)
        )
        lam_tan = (g1 * f1 - g2 / g1 - (d - 1) * g1 / g + (d - 1) / r) / r
        return lam_rad, lam_tan

    def as_potential(self, weak_osl_lambda: Optional[float] = None) -> Potential:
        """Adapter so samplers can treat f_h as an ordinary potential."""
        return Potential(
            name=self.name,
            dim=self.dim,
            value=self.value,
            grad=self.grad,
            constants=RegularityInfo(weak_osl_lambda=weak_osl_lambda),
            radial=None,
        )


# ---------------------------------------------------------------------------
# tail assumption diagnostics
# ---------------------------------------------------------------------------


def _scan_general(tp: TransformedPotential, r):
    d = tp.dim
    psi, p1, p2, p3 = _psi_derivs(r, tp.params)
    f1 = tp.profile.d1(psi)
    f2 = tp.profile.d2(psi)
    smooth_rad = (
        p1 * p1 * f2
        + p2 * f1
        - (p3 * p1 - p2 * p2) / (p1 * p1)
        - (d - 1) * (p2 * psi - p1 * p1) / (psi * psi)
        - (d - 1) / (r * r)
    )
    u1 = p1 * f1 - p2 / p1 - (d - 1) * p1 / psi + (d - 1) / r
    smooth_tan = u1 / r
    dissip = u1 * r

    # u''' by differencing the analytic u'' (needs only f', f'')
    def upp(rr):
        ps, q1, q2, q3 = _psi_derivs(rr, tp.params)
        return (
            q1 * q1 * tp.profile.d2(ps)
            + q2 * tp.profile.d1(ps)
            - (q3 * q1 - q2 * q2) / (q1 * q1)
            - (d - 1) * (q2 * ps - q1 * q1) / (ps * ps)
            - (d - 1) / (rr * rr)
        )

    hstep = 1e-5 * np.maximum(1.0, r)
    u3 = (upp(r + hstep) - upp(r - hstep)) / (2.0 * hstep)
    hess_a = u3
    hess_b = np.abs(smooth_rad / r - u1 / (r * r))
    return {
        "smooth_radial": smooth_rad,
        "smooth_tangential": smooth_tan,
        "dissipativity": dissip,
        "hessian_third_radial": hess_a,
        "hessian_mixed": hess_b,
    }


def _scan_student_t_special(tp: TransformedPotential, r):
    """Stable simplified expressions for alpha = 0, beta_exp = 2 bases."""
    d = tp.dim
    b = tp.params.b
    # w = psi^{-2} = exp(-2 b r^2) -> 0 in the tail; c = d + kappa
    c = 2.0 * tp.profile.d1(1.0) / 1.0  # f'(s) = c s/(1+s^2); f'(1) = c/2
    w = np.exp(-2.0 * b * np.square(r))
    sf1 = c / (1.0 + w)  # psi f'(psi)
    s2f2 = c * (w - 1.0) / np.square(1.0 + w)  # psi^2 f''(psi)
    s3f3 = 2.0 * c * (1.0 - 3.0 * w) / (1.0 + w) ** 3  # psi^3 f'''(psi)
    r2 = np.square(r)
    smooth_a = 2.0 * b * sf1 - 2.0 * b * d + (d - 2.0) / r2
    smooth_b = 4.0 * b * b * r2 * s2f2 + (2.0 * b + 4.0 * b * b * r2) * sf1 - 2.0 * b * d - (d - 2.0) / r2
    dissip = 2.0 * b * r2 * sf1 - 2.0 * b * d * r2 + (d - 2.0)
    hess_a = (
        (12.0 * b * b * r + 8.0 * b**3 * r**3) * sf1
        + (12.0 * b * b * r + 24.0 * b**3 * r**3) * s2f2
        + 8.0 * b**3 * r**3 * s3f3
        + 2.0 * (d - 2.0) / r**3
    )
    hess_b = np.abs(4.0 * b * b * r * sf1 + 4.0 * b * b * r * s2f2 - 2.0 * (d - 2.0) / r**3)
    return {
        "smooth_radial": smooth_b,
        "smooth_tangential": smooth_a,
        "dissipativity": dissip,
        "hessian_third_radial": hess_a,
        "hessian_mixed": hess_b,
    }


def assumption_scan(
    tp: TransformedPotential,
    r_grid,
    L_candidate: Optional[float] = None,
    A_candidate: Optional[float] = None,
    B_candidate: float = 0.0,
) -> dict:
    """Evaluate the tail assumptions on a grid of radii beyond R2.

    Returns per-expression min/max plus pass flags against the supplied
    smoothness (L) and dissipativity (A, B) candidates when given.  For
    Student-t bases with (alpha = 0, beta_exp = 2) the numerically
    stable simplified expressions are used.
    """
    r = np.asarray(r_grid, dtype=np.float64)
    if np.any(r <= tp.params.R2):
        raise ParameterError(f"assumption scan grid must satisfy r > R2 = {tp.params.R2}")
    special = tp.base.name == "student_t" and tp.params.alpha == 0.0 and tp.params.beta_exp == 2.0
    exprs = _scan_student_t_special(tp, r) if special else _scan_general(tp, r)
    report: dict = {"special_form": special, "grid_min": float(np.min(r)), "grid_max": float(np.max(r)), "checks": {}}
    for key, v in exprs.items():
        entry = {"min": float(np.min(v)), "max": float(np.max(v))}
        if key.startswith("smooth") or key.startswith("hessian"):
            if L_candidate is not None:
                entry["bound"] = L_candidate
                entry["ok"] = bool(np.all(v < L_candidate))
        elif key == "dissipativity" and A_candidate is not None:
            target = A_candidate * np.square(r) - B_candidate
            entry["bound"] = f"{A_candidate} r^2 - {B_candidate}"
            entry["ok"] = bool(np.all(v > target))
        report["checks"][key] = entry
    return report


# ---------------------------------------------------------------------------
# transformed Langevin sampling
# ---------------------------------------------------------------------------


def transformed_langevin_sample(tp: TransformedPotential, h: float, N: int, y0, rng: RngStream):
    """Run EM on f_h for N steps from y0 and map the endpoint through h.

    Returns (x_sample, grad_queries) with one f_h gradient per step.
    """
    ids = np.array([rng.stream_id], dtype=np.uint64)
    k1, k2 = stream_keys(rng.seed, ids)
    y = kernels.em_endpoints(tp, np.atleast_1d(np.asarray(y0, dtype=np.float64)), h, N, k1, k2)
    return h_map(y, tp.params)[0], N


def transformed_langevin_batch(tp: TransformedPotential, h: float, N: int, y0, rng: RngStream, n_chains: int):
    """Endpoints of n_chains independent transformed-ULA runs."""
    k1, k2 = stream_keys(rng.seed, rng.child_ids(n_chains))
    y = kernels.em_endpoints(tp, np.asarray(y0, dtype=np.float64), h, N, k1, k2)
    return h_map(y, tp.params), N
