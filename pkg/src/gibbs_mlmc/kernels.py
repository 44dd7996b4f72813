"""Batched path-simulation kernels.

Every kernel is a pure function of the stream keys and counter layout:
path ``i`` in a batch owns one stream, and the increment of fine step
``s``, coordinate ``j`` sits at counter ``counter0 + s*d + j``.  Results
are therefore independent of batch chunking and identical between the
numpy and compiled implementations (the compiled path is used whenever
the potential carries a jitted gradient).

Noise is handled in the scaled form ``dB = sqrt(2h) * z`` so that the
coarse increment of a coupled pair is the exact floating-point sum of
the two fine increments.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DivergenceError, WeightOverflowError
from .rng import HAVE_NUMBA, normal_from_counters

DIVERGENCE_LIMIT = 1e12
LOG_WEIGHT_LIMIT = 700.0

__all__ = [
    "DIVERGENCE_LIMIT",
    "LOG_WEIGHT_LIMIT",
    "em_endpoints",
    "spring_coupled_endpoints",
]


def _step_noise(k1c, k2c, counter0, step, d, scale):
    counters = np.uint64(counter0 + step * d) + np.arange(d, dtype=np.uint64)
    z = normal_from_counters(k1c, k2c, counters[None, :])
    return scale * z


def _em_endpoints_numpy(p, x, h, n_steps, k1, k2, counter0):
    k1c = k1[:, None]
    k2c = k2[:, None]
    d = x.shape[1]
    scale = math.sqrt(2.0 * h)
    for s in range(n_steps):
        g = p.grad(x)
        dB = _step_noise(k1c, k2c, counter0, s, d, scale)
        x = x - h * g + dB
        m = float(np.max(np.abs(x)))
        if not (m < DIVERGENCE_LIMIT):
            bad = int(np.argmax(np.max(np.abs(x), axis=1) >= DIVERGENCE_LIMIT))
            raise DivergenceError(s, f"path {bad}, |x| = {m:.3g}, h = {h:g}")
    return x


def _rn_terms_numpy(dB, spring, h):
    # log R for one step, dB = sqrt(2) dW convention
    return -0.5 * np.einsum("ij,ij->i", dB, spring) - 0.25 * h * np.einsum("ij,ij->i", spring, spring)


def _spring_coupled_numpy(p, xf, xc, S, h, n_coarse, k1, k2, counter0):
    k1c = k1[:, None]
    k2c = k2[:, None]
    d = xf.shape[1]
    scale = math.sqrt(2.0 * h)
    h2 = 2.0 * h
    nb_ = xf.shape[0]
    log_rf = np.zeros(nb_)
    log_rc = np.zeros(nb_)
    for n in range(n_coarse):
        dB1 = _step_noise(k1c, k2c, counter0, 2 * n, d, scale)
        dB2 = _step_noise(k1c, k2c, counter0, 2 * n + 1, d, scale)
        gc = p.grad(xc)
        gf = p.grad(xf)
        sc = S * (xf - xc)
        sf = S * (xc - xf)
        yc_half = xc + (sc - gc) * h + dB1
        yf_half = xf + (sf - gf) * h + dB1
        log_rf += _rn_terms_numpy(dB1, sf, h)
        gf2 = p.grad(yf_half)
        sf2 = S * (yc_half - yf_half)
        xf = yf_half + (sf2 - gf2) * h + dB2
        # sequential adds so the drift-free coupling is bitwise exact
        xc = xc + (sc - gc) * h2 + dB1 + dB2
        log_rf += _rn_terms_numpy(dB2, sf2, h)
        log_rc += _rn_terms_numpy(dB1 + dB2, sc, h2)
        m = max(float(np.max(np.abs(xf))), float(np.max(np.abs(xc))))
        if not (m < DIVERGENCE_LIMIT):
            raise DivergenceError(2 * n + 1, f"coupled pair, |x| = {m:.3g}, h = {h:g}")
        w = max(float(np.max(np.abs(log_rf))), float(np.max(np.abs(log_rc))))
        if not (w < LOG_WEIGHT_LIMIT):
            raise WeightOverflowError(2 * n + 1, w)
    return xf, xc, log_rf, log_rc


if HAVE_NUMBA:
    import numba as nb

    from .rng import _normal_scalar

    @nb.njit(cache=False)
    def _em_loop_nb(gradf, params, x, h, n_steps, k1, k2, counter0, limit):
        B, d = x.shape
        scale = math.sqrt(2.0 * h)
        g = np.empty(d)
        for i in range(B):
            for s in range(n_steps):
                gradf(params, x[i], g)
                base = counter0 + s * d
                for j in range(d):
                    z = _normal_scalar(k1[i], k2[i], np.uint64(base + j))
                    v = x[i, j] - h * g[j] + scale * z
                    x[i, j] = v
                    if not (abs(v) < limit):
                        return i, s
        return -1, -1

    @nb.njit(cache=False)
    def _spring_loop_nb(gradf, params, xf, xc, S, h, n_coarse, k1, k2, counter0, limit, wlimit, log_rf, log_rc):
        B, d = xf.shape
        scale = math.sqrt(2.0 * h)
        h2 = 2.0 * h
        gc = np.empty(d)
        gf = np.empty(d)
        gf2 = np.empty(d)
        dB1 = np.empty(d)
        dB2 = np.empty(d)
        yfh = np.empty(d)
        ych = np.empty(d)
        for i in range(B):
            for n in range(n_coarse):
                base1 = counter0 + (2 * n) * d
                base2 = counter0 + (2 * n + 1) * d
                for j in range(d):
                    dB1[j] = scale * _normal_scalar(k1[i], k2[i], np.uint64(base1 + j))
                    dB2[j] = scale * _normal_scalar(k1[i], k2[i], np.uint64(base2 + j))
                gradf(params, xc[i], gc)
                gradf(params, xf[i], gf)
                dot_f = 0.0
                nrm_f = 0.0
                for j in range(d):
                    sc_j = S * (xf[i, j] - xc[i, j])
                    sf_j = S * (xc[i, j] - xf[i, j])
                    ych[j] = xc[i, j] + (sc_j - gc[j]) * h + dB1[j]
                    yfh[j] = xf[i, j] + (sf_j - gf[j]) * h + dB1[j]
                    dot_f += dB1[j] * sf_j
                    nrm_f += sf_j * sf_j
                log_rf[i] += -0.5 * dot_f - 0.25 * h * nrm_f
                gradf(params, yfh, gf2)
                dot_f = 0.0
                nrm_f = 0.0
                dot_c = 0.0
                nrm_c = 0.0
                diverged = False
                for j in range(d):
                    sf2_j = S * (ych[j] - yfh[j])
                    sc_j = S * (xf[i, j] - xc[i, j])
                    vf = yfh[j] + (sf2_j - gf2[j]) * h + dB2[j]
                    vc = xc[i, j] + (sc_j - gc[j]) * h2 + dB1[j] + dB2[j]
                    dot_f += dB2[j] * sf2_j
                    nrm_f += sf2_j * sf2_j
                    dsum = dB1[j] + dB2[j]
                    dot_c += dsum * sc_j
                    nrm_c += sc_j * sc_j
                    xf[i, j] = vf
                    xc[i, j] = vc
                    if not (abs(vf) < limit and abs(vc) < limit):
                        diverged = True
                log_rf[i] += -0.5 * dot_f - 0.25 * h * nrm_f
                log_rc[i] += -0.5 * dot_c - 0.25 * h2 * nrm_c
                if diverged:
                    return 1, i, 2 * n + 1
                if not (abs(log_rf[i]) < wlimit and abs(log_rc[i]) < wlimit):
                    return 2, i, 2 * n + 1
        return 0, -1, -1


# test hook: force the reference implementation even when a compiled
# gradient is available
FORCE_NUMPY = False


def _can_jit(p) -> bool:
    return HAVE_NUMBA and not FORCE_NUMPY and getattr(p, "njit_grad", None) is not None


def em_endpoints(p, x0, h, n_steps, k1, k2, counter0=0):
    """Endpoints of EM paths, one stream key pair per row of the batch.

    ``x0`` may be a single point (broadcast) or an (n, d) array of
    per-path starting states.  Returns an (n, d) array.
    """
    k1 = np.ascontiguousarray(k1, dtype=np.uint64)
    k2 = np.ascontiguousarray(k2, dtype=np.uint64)
    n = k1.shape[0]
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim == 1:
        x = np.tile(x0, (n, 1))
    else:
        x = np.array(x0, copy=True)
    if n_steps == 0:
        return x
    if _can_jit(p):
        i, s = _em_loop_nb(p.njit_grad, p.njit_params, x, float(h), int(n_steps), k1, k2, int(counter0), DIVERGENCE_LIMIT)
        if hasattr(p, "add_queries"):
            p.add_queries(n * n_steps)
        if i >= 0:
            raise DivergenceError(s, f"path {i}, h = {h:g}")
        return x
    return _em_endpoints_numpy(p, x, float(h), int(n_steps), k1, k2, int(counter0))


def spring_coupled_endpoints(p, x0_fine, x0_coarse, S, h, n_coarse, k1, k2, counter0=0):
    """Coupled fine/coarse endpoints with spring drift and log RN weights.

    The fine path takes ``2 n_coarse`` steps of ``h``; the coarse path
    moves once per coarse interval with step ``2h`` driven by the exact
    sum of the two fine increments.  ``S = 0`` reduces to the plain
    same-noise coupling (weights exactly zero).  Returns
    ``(x_fine, x_coarse, log_rf, log_rc)``.
    """
    k1 = np.ascontiguousarray(k1, dtype=np.uint64)
    k2 = np.ascontiguousarray(k2, dtype=np.uint64)
    n = k1.shape[0]
    xf = np.asarray(x0_fine, dtype=np.float64)
    xc = np.asarray(x0_coarse, dtype=np.float64)
    xf = np.tile(xf, (n, 1)) if xf.ndim == 1 else np.array(xf, copy=True)
    xc = np.tile(xc, (n, 1)) if xc.ndim == 1 else np.array(xc, copy=True)
    if n_coarse == 0:
        return xf, xc, np.zeros(n), np.zeros(n)
    if _can_jit(p):
        log_rf = np.zeros(n)
        log_rc = np.zeros(n)
        code, i, s = _spring_loop_nb(
            p.njit_grad, p.njit_params, xf, xc, float(S), float(h), int(n_coarse),
            k1, k2, int(counter0), DIVERGENCE_LIMIT, LOG_WEIGHT_LIMIT, log_rf, log_rc,
        )
        if hasattr(p, "add_queries"):
            p.add_queries(3 * n * n_coarse)
        if code == 1:
            raise DivergenceError(s, f"coupled pair, path {i}, h = {h:g}")
        if code == 2:
            raise WeightOverflowError(s, max(abs(log_rf[i]), abs(log_rc[i])))
        return xf, xc, log_rf, log_rc
    return _spring_coupled_numpy(p, xf, xc, float(S), float(h), int(n_coarse), k1, k2, int(counter0))
