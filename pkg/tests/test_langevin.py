import dataclasses
import math

import numpy as np
import pytest

from gibbs_mlmc import kernels
from gibbs_mlmc.errors import DivergenceError, ParameterError
from gibbs_mlmc.langevin import (
    CoupledEndpoints,
    PathConfig,
    coupled_batch,
    em_step,
    gaussian_increment,
    path_endpoints_batch,
    simulate_coupled,
    simulate_horizon,
    simulate_path,
    split_horizon,
)
from gibbs_mlmc.potentials import make_observable, make_potential
from gibbs_mlmc.rng import RngStream, stream_keys


def zero_potential(d):
    base = make_potential("quadratic", d=d)
    return dataclasses.replace(
        base,
        name="zero",
        value=lambda x: np.zeros(np.asarray(x).shape[:-1]),
        grad=lambda x: np.zeros_like(np.asarray(x, dtype=np.float64)),
        njit_grad=None,
        njit_params=None,
    )


def test_em_step_formula():
    out = em_step(np.array([1.0]), np.array([1.0]), 0.5, np.array([0.1]))
    assert abs(out[0] - (1.0 - 0.5 + math.sqrt(2) * 0.1)) < 1e-15


def test_em_step_trivial_zero():
    assert np.array_equal(em_step(np.zeros(3), np.zeros(3), 0.1, np.zeros(3)), np.zeros(3))


def test_em_step_geometric_decay_without_noise():
    x = np.array([4.0])
    h = 0.25
    for _ in range(5):
        x = em_step(x, x, h, np.zeros(1))
    assert abs(x[0] - 4.0 * (1 - h) ** 5) < 1e-14


def test_gaussian_increment_variance_and_determinism():
    r1 = RngStream(3, 1)
    r2 = RngStream(3, 1)
    a = gaussian_increment(r1, 4, 0.25)
    b = gaussian_increment(r2, 4, 0.25)
    assert np.array_equal(a, b)
    with pytest.raises(ParameterError):
        gaussian_increment(r1, 2, 0.0)


def test_split_horizon_remainder_rule():
    assert split_horizon(1.0, 0.25) == [(0.25, 4)]
    segs = split_horizon(1.0, 0.3)
    assert segs[0] == (0.3, 3)
    assert abs(segs[1][0] - 0.1) < 1e-12 and segs[1][1] == 1


def test_simulate_path_zero_steps():
    p = make_potential("quadratic", d=2)
    x, q = simulate_path(p, PathConfig(0.01, 0, np.array([5.0, -1.0])), RngStream(1, 2))
    assert np.array_equal(x, np.array([5.0, -1.0]))
    assert q == 0


def test_simulate_horizon_counts_remainder_query():
    p = make_potential("quadratic", d=1)
    _, q = simulate_horizon(p, 1.0, 0.3, np.zeros(1), RngStream(4, 0))
    assert q == 4  # 3 full steps + 1 remainder step


def test_stationary_law_quadratic():
    # h = 0.01, T = 10, x0 = 5: mean ~ 0, variance ~ 1/(1 - h/2)
    p = make_potential("quadratic", d=1)
    ends, q = path_endpoints_batch(p, 10.0, 0.01, np.array([5.0]), RngStream(11, 0).child(2), 10_000)
    assert q == 1000
    mean = ends.mean()
    var = ends.var(ddof=1)
    stderr = ends.std(ddof=1) / math.sqrt(len(ends))
    assert abs(mean) <= 3 * stderr
    assert abs(var - 1.0) <= 0.1


def test_batch_equals_single_path_bitwise():
    p = make_potential("quadratic", d=1)
    rng = RngStream(11, 0)
    batch, _ = path_endpoints_batch(p, 1.0, 0.01, np.array([5.0]), rng.child(3), 4)
    single, _ = simulate_path(p, PathConfig(0.01, 100, np.array([5.0])), rng.child(3).child(0))
    assert np.array_equal(batch[0], single)


def test_batch_chunking_independence():
    p = make_potential("oscillatory", d=2)
    rng = RngStream(12, 0)
    full, _ = path_endpoints_batch(p, 0.5, 0.05, np.zeros(2), rng.child(1), 8)
    k1, k2 = stream_keys(rng.seed, rng.child(1).child_ids(8))
    a = kernels.em_endpoints(p, np.zeros(2), 0.05, 10, k1[:3], k2[:3])
    b = kernels.em_endpoints(p, np.zeros(2), 0.05, 10, k1[3:], k2[3:])
    assert np.array_equal(full, np.vstack([a, b]))


def test_coupled_zero_potential_endpoints_identical():
    zp = zero_potential(2)
    ce = simulate_coupled(zp, 0.01, 50, np.zeros(2), np.zeros(2), RngStream(7, 1))
    assert isinstance(ce, CoupledEndpoints)
    assert np.array_equal(ce.x_fine, ce.x_coarse)
    assert ce.grad_queries == 150


def test_coupled_n_zero_returns_starts():
    p = make_potential("quadratic", d=2)
    ce = simulate_coupled(p, 0.01, 0, np.ones(2), np.zeros(2), RngStream(7, 2))
    assert np.array_equal(ce.x_fine, np.ones(2))
    assert np.array_equal(ce.x_coarse, np.zeros(2))


def test_coarse_reconstruction_from_fine_increments():
    # the coarse path is reproducible bit-for-bit from the fine noise
    p = make_potential("quadratic", d=2)
    rng = RngStream(19, 5)
    N, h = 20, 0.05
    ce = simulate_coupled(p, h, N, np.ones(2), np.ones(2), rng)
    k1, k2 = stream_keys(rng.seed, np.array([rng.stream_id], dtype=np.uint64))
    scale = math.sqrt(2.0 * h)
    c = np.arange(2 * N * 2, dtype=np.uint64)
    from gibbs_mlmc.rng import normal_from_counters

    dB = scale * np.asarray(normal_from_counters(k1[0], k2[0], c)).reshape(2 * N, 2)
    xc = np.ones(2)
    for n in range(N):
        g = p.grad(xc)
        xc = xc + (0.0 * xc - g) * (2 * h) + dB[2 * n] + dB[2 * n + 1]
    assert np.array_equal(xc, ce.x_coarse)


def test_coupled_distance_scales_with_h_squared():
    p = make_potential("quadratic", d=1)
    rng = RngStream(23, 0)
    second_moments = []
    for h in (0.02, 0.01, 0.005):
        N = int(round(1.0 / (2 * h)))
        xf, xc = coupled_batch(p, h, N, np.zeros(1), np.zeros(1), rng.child(int(1 / h)), 10_000)
        second_moments.append(np.mean(np.sum((xf - xc) ** 2, axis=1)))
    for a, b in zip(second_moments, second_moments[1:]):
        assert 3.0 <= a / b <= 5.0


def test_contraction_coupling_same_noise():
    # E|X_T - Y_T|^2 <= exp(-2 m T) |X_0 - Y_0|^2 (1 + slack)
    p = make_potential("quadratic", d=1)
    rng = RngStream(29, 0)
    for T in (1.0, 2.0, 4.0):
        e0, _ = path_endpoints_batch(p, T, 0.01, np.zeros(1), rng.child(int(T)), 10_000)
        e4, _ = path_endpoints_batch(p, T, 0.01, np.full(1, 4.0), rng.child(int(T)), 10_000)
        d2 = np.mean(np.sum((e0 - e4) ** 2, axis=1))
        assert d2 <= math.exp(-2.0 * T) * 16.0 * 1.1


def test_divergence_raises_with_step_index():
    p = make_potential("quadratic", d=1)
    blowup = dataclasses.replace(
        p, name="blowup", grad=lambda x: -1e9 * np.asarray(x, dtype=np.float64), njit_grad=None, njit_params=None
    )
    with pytest.raises(DivergenceError) as exc:
        path_endpoints_batch(blowup, 1.0, 0.1, np.ones(1), RngStream(1, 1), 4)
    assert exc.value.step >= 0


def test_cos_observable_stationary_mean():
    # E_pi[cos] = exp(-1/2) for the standard normal target
    p = make_potential("quadratic", d=1)
    phi = make_observable("cos")
    ends, _ = path_endpoints_batch(p, 8.0, 0.01, np.zeros(1), RngStream(31, 0).child(1), 40_000)
    vals = np.asarray(phi(ends))
    stderr = vals.std(ddof=1) / math.sqrt(len(vals))
    assert abs(vals.mean() - math.exp(-0.5)) <= 3 * stderr + 0.012
