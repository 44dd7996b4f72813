import math

import numpy as np
import pytest

from gibbs_mlmc.errors import NumericError, ParameterError
from gibbs_mlmc.potentials import (
    BUILTIN_POTENTIALS,
    CountingPotential,
    check_gradient,
    make_observable,
    make_potential,
)
from gibbs_mlmc.rng import RngStream


def ball_points(rng, d, radius, n):
    pts = []
    for _ in range(n):
        u = rng.normal(d)
        u /= np.linalg.norm(u)
        pts.append(radius * rng.uniform() ** (1.0 / d) * u)
    return pts


# ---------------------------------------------------------------------------
# spec examples
# ---------------------------------------------------------------------------


def test_oscillatory_at_origin():
    p = make_potential("oscillatory", d=2)
    assert p.value(np.zeros(2)) == -2.0
    assert np.array_equal(p.grad(np.zeros(2)), np.zeros(2))


def test_oscillatory_negative_curvature_at_pi():
    # second directional derivative along e1 at x1 = pi equals 1 + 2cos(pi) = -1
    p = make_potential("oscillatory", d=2)
    eps = 1e-6
    xp = np.array([math.pi + eps, 0.0])
    xm = np.array([math.pi - eps, 0.0])
    d2 = (p.grad(xp)[0] - p.grad(xm)[0]) / (2 * eps)
    assert abs(d2 - (-1.0)) < 1e-6


def test_student_t_value():
    p = make_potential("student_t", d=1, kappa=3)
    assert abs(float(p.value(np.array([2.0]))) - 2.0 * math.log(5.0)) < 1e-12


def test_quadratic_example():
    p = make_potential("quadratic", d=3)
    x = np.array([1.0, 2.0, 2.0])
    assert float(p.value(x)) == 4.5
    assert np.array_equal(p.grad(x), x)


def test_check_gradient_quadratic_exact():
    p = make_potential("quadratic", d=2)
    assert check_gradient(p, np.array([1.0, 1.0]), 1e-5) <= 1e-8


def test_check_gradient_welsch_single_point():
    p = make_potential("welsch", x_data=np.array([[1.0]]), y_data=np.array([0.0]), sigma=1.0, lambda0=0.1)
    assert check_gradient(p, np.array([0.5]), 1e-5) <= 1e-5


def test_check_gradient_student_t_random():
    p = make_potential("student_t", d=3, kappa=2)
    rng = RngStream(5, 1)
    for x in ball_points(rng, 3, 5.0, 10):
        assert check_gradient(p, x, 1e-5) <= 1e-5


def test_check_gradient_rejects_bad_step_and_nonfinite():
    p = make_potential("quadratic", d=1)
    with pytest.raises(ParameterError):
        check_gradient(p, np.array([1.0]), 0.5)
    with pytest.raises(NumericError):
        check_gradient(p, np.array([np.inf]))


# ---------------------------------------------------------------------------
# invariants across all builtins
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("name", sorted(BUILTIN_POTENTIALS))
def test_gradients_match_finite_differences(name):
    p = make_potential(name)
    rng = RngStream(17, hash(name) % 1000)
    for x in ball_points(rng, p.dim, 5.0, 100):
        assert check_gradient(p, x, 1e-5) <= 1e-5


@pytest.mark.parametrize("name", sorted(BUILTIN_POTENTIALS))
def test_declared_smoothness_holds_on_samples(name):
    p = make_potential(name)
    c = p.constants
    if c.smooth_L is None:
        pytest.skip("no smoothness constant declared")
    rng = RngStream(23, hash(name) % 1000)
    for _ in range(100):
        x = np.asarray(ball_points(rng, p.dim, 10.0, 1)[0])
        y = np.asarray(ball_points(rng, p.dim, 10.0, 1)[0])
        lhs = np.linalg.norm(p.grad(x) - p.grad(y))
        assert lhs <= c.smooth_L * np.linalg.norm(x - y) * (1 + 1e-9)


@pytest.mark.parametrize("name", sorted(BUILTIN_POTENTIALS))
def test_declared_dissipativity_holds_on_samples(name):
    p = make_potential(name)
    if p.constants.dissipative is None:
        pytest.skip("no dissipativity pair declared")
    a, b = p.constants.dissipative
    assert a > 0 and b > 0
    rng = RngStream(29, hash(name) % 1000)
    for _ in range(100):
        x = np.asarray(ball_points(rng, p.dim, 10.0, 1)[0])
        assert np.dot(x, p.grad(x)) >= a * np.dot(x, x) - b - 1e-9


def test_oscillatory_dissipativity_bound():
    p = make_potential("oscillatory", d=2)
    rng = RngStream(31, 0)
    for x in ball_points(rng, 2, 8.0, 200):
        assert np.dot(x, p.grad(x)) >= 0.5 * np.dot(x, x) - 2.0 - 1e-12


def test_radial_gauss_dissipativity_bound():
    p = make_potential("radial_gauss", d=2, a=2.0)
    rng = RngStream(37, 0)
    for x in ball_points(rng, 2, 8.0, 200):
        assert np.dot(x, p.grad(x)) >= np.dot(x, x) - 1e-12


def test_cosine_well_smoothness_pairs():
    lam = 1.5
    p = make_potential("cosine_well", d=3, lambda0=lam)
    rng = RngStream(41, 0)
    for _ in range(200):
        x = rng.normal(3) * 4
        y = rng.normal(3) * 4
        assert np.linalg.norm(p.grad(x) - p.grad(y)) <= (1 + lam) * np.linalg.norm(x - y) * (1 + 1e-12)


def test_strong_convexity_metadata_consistency():
    # strong convexity implies the weaker condition with lambda = 0
    for name in BUILTIN_POTENTIALS:
        p = make_potential(name)
        c = p.constants
        if c.osl_m is not None:
            assert c.weak_osl_lambda == 0.0


def test_oscillatory_declared_constants():
    c = make_potential("oscillatory", d=2).constants
    assert c.smooth_L == 3.0
    assert c.hessian_L == 2.0
    assert c.weak_osl_lambda == 1.0
    assert c.dissipative == (0.5, 2.0)


# ---------------------------------------------------------------------------
# parameter validation
# ---------------------------------------------------------------------------


def test_unknown_name_rejected():
    with pytest.raises(ParameterError):
        make_potential("not_a_potential")


def test_radial_gauss_requires_a_above_half_e():
    with pytest.raises(ParameterError):
        make_potential("radial_gauss", d=2, a=math.e / 2)


def test_student_t_requires_positive_kappa():
    with pytest.raises(ParameterError):
        make_potential("student_t", d=1, kappa=0.0)


def test_welsch_requires_positive_scale():
    with pytest.raises(ParameterError):
        make_potential("welsch", sigma=0.0, lambda0=0.5)


# ---------------------------------------------------------------------------
# observables and counting
# ---------------------------------------------------------------------------


def test_observables_lipschitz_and_bounded():
    rng = RngStream(43, 0)
    for name in ("cos", "tanh"):
        obs = make_observable(name)
        for _ in range(200):
            x = rng.normal(3) * 5
            y = rng.normal(3) * 5
            assert abs(float(obs(x)) - float(obs(y))) <= obs.lipschitz_K * np.linalg.norm(x - y) * (1 + 1e-12)
            assert abs(float(obs(x))) <= obs.abs_bound


def test_const_observable():
    obs = make_observable("const", value=2.5)
    assert np.all(obs(np.zeros((4, 2))) == 2.5)


def test_unknown_observable_rejected():
    with pytest.raises(ParameterError):
        make_observable("sin")


def test_counting_potential_counts_rows():
    p = CountingPotential(make_potential("quadratic", d=2))
    p.grad(np.zeros(2))
    p.grad(np.zeros((10, 2)))
    p.add_queries(5)
    assert p.queries == 16
    p.value(np.zeros(2))  # values are free
    assert p.queries == 16
