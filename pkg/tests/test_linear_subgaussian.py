import math

import numpy as np
import pytest

from helpers import box_instance
from riskcert.affine_estimator import optimize, psi_hat
from riskcert.convex_geometry import Box, EuclideanBall, Singleton
from riskcert.errors import DomainError
from riskcert.linear_subgaussian import (
    consistency_check, direct_product_opt, gen_problem, near_opt_factor, psi_hat_box, psi_hat_closed,
    solve_box,
)
from riskcert.saddle_solver import SolverConfig


def _ball_problem(sigma, g, n=2):
    U = EuclideanBall(np.zeros(n), 1.0)
    V = Singleton(np.zeros(1))
    return direct_product_opt(U, V, np.eye(n), np.zeros(n), sigma**2 * np.eye(n), np.zeros((1, n, n)),
                              g, 0.0, 0.01)


def test_direct_product_ball_value():
    f, kappa, opt = _ball_problem(0.1, np.array([1.0, 0.0]))
    assert opt == pytest.approx(0.1 * math.sqrt(2 * math.log(200)), rel=1e-4)
    assert opt == pytest.approx(0.32552, abs=1e-5)
    assert kappa == pytest.approx(0.0, abs=1e-8)


def test_direct_product_large_noise_caps_at_one():
    _, _, opt = _ball_problem(1.0, np.array([1.0, 0.0]))
    assert opt == pytest.approx(1.0, rel=1e-4)


def test_direct_product_zero_functional():
    f, _, opt = _ball_problem(0.1, np.zeros(2))
    assert opt == 0.0
    np.testing.assert_array_equal(f, 0.0)


def test_noise_term_scales_with_sigma():
    f, _, opt1 = _ball_problem(0.05, np.array([1.0, 0.0]))
    _, _, opt2 = _ball_problem(0.10, np.array([1.0, 0.0]))
    assert opt2 == pytest.approx(2 * opt1, rel=1e-4)


def test_consistency_cases():
    X = Box(np.zeros(2), np.ones(2))
    assert consistency_check(np.array([1.0, 2.0]), np.eye(2), X)
    assert not consistency_check(np.array([1.0, 0.0]), np.zeros((1, 2)), X)
    A = np.array([[1.0, 0.0]])
    assert not consistency_check(np.array([0.0, 1.0]), A, X)
    assert consistency_check(np.array([1.0, 0.0]), A, X)


def test_consistency_flat_set():
    # X flat along the kernel of A: nothing to hide there
    X = Box(np.zeros(2), np.array([1.0, 0.0]))
    assert consistency_check(np.array([0.0, 1.0]), np.array([[1.0, 0.0]]), X)


def test_near_opt_factor():
    assert near_opt_factor(0.01) == pytest.approx(1.3993, abs=1e-3)
    vals = [near_opt_factor(e) for e in (1e-2, 1e-4, 1e-8, 1e-12)]
    assert all(a > b > 1.0 for a, b in zip(vals, vals[1:]))
    with pytest.raises(DomainError):
        near_opt_factor(0.5)


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("sign", [1, -1])
def test_closed_form_agrees_with_generic(seed, sign):
    prob = box_instance(seed, sigma=1.0)
    f = np.random.default_rng(seed).normal(size=3) * 0.5
    a = psi_hat_closed(f, sign, prob)
    b = psi_hat(f, sign, prob.problem())
    c, _ = psi_hat_box(f, sign, prob)
    assert a == pytest.approx(b, rel=1e-6)
    assert c == pytest.approx(b, rel=1e-6)


def test_box_solver_matches_generic_solver():
    prob = box_instance(3, sigma=0.7)
    a = solve_box(prob)
    b = optimize(prob.problem(), SolverConfig(max_iter=300))
    assert a.rho == pytest.approx(b.rho, rel=1e-3)


def test_gen_problem_shapes_and_envelope():
    exact, env = gen_problem(6, 9, 2.0, 2.0, 0.05, seed=3)
    assert exact.A.shape == (6, 9)
    s = np.linalg.svd(exact.A, compute_uv=False)
    assert s[0] / s[-1] == pytest.approx(2.0)
    assert float(exact.g @ exact.X.upper) == pytest.approx(2.0)
    a = solve_box(exact, SolverConfig(max_iter=400))
    b = solve_box(env, SolverConfig(max_iter=400))
    # the envelope bound holds at the exact estimate too
    assert psi_hat_box(a.f, 1, exact)[0] <= psi_hat_box(a.f, 1, env)[0] + 1e-12
    assert b.rho >= a.rho * (1 - 1e-2)
    with pytest.raises(DomainError):
        gen_problem(4, 4, 2.0, 2.0, 0.05, seed=0)


def test_gen_problem_reproducible():
    a, _ = gen_problem(4, 6, 1.0, 3.0, 0.1, seed=11)
    b, _ = gen_problem(4, 6, 1.0, 3.0, 0.1, seed=11)
    np.testing.assert_array_equal(a.A, b.A)
    np.testing.assert_array_equal(a.Ms, b.Ms)
