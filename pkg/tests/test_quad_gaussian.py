import math

import numpy as np
import pytest

from helpers import fd_grad
from riskcert.errors import DimensionError, DomainError
from riskcert.quad_gaussian import (
    QuadEstimate, apply_quad, build_quad_estimate, energy_opt, energy_problem, energy_psi,
    gen_consistency_problem, gen_indirect_problem, opt_curve, optimize_quad, psi_hat_quad,
    psi_hat_quad_details, sobolev_operator,
)
from riskcert.quad_gaussian import _energy_alpha_min
from riskcert.saddle_solver import SolverConfig

ENERGY = dict(m=3, r=1.0, R=2.0, theta=0.5, sigma=0.15, epsilon=0.05)


def _energy():
    return energy_problem(**ENERGY)


def test_zero_estimator_bounds():
    prob = _energy()
    z = np.zeros(3), np.zeros((3, 3))
    assert psi_hat_quad(*z, +1, prob) == pytest.approx(-1.0, abs=1e-9)
    assert psi_hat_quad(*z, -1, prob) == pytest.approx(4.0, abs=1e-9)
    est = build_quad_estimate(*z, prob)
    assert est.rho == pytest.approx(1.5, abs=1e-9)
    assert est.kappa == pytest.approx(2.5, abs=1e-9)


def test_zero_functional_gives_zero_risk():
    prob = _energy()
    from dataclasses import replace
    prob0 = replace(prob, Q=np.zeros((4, 4)))
    est = optimize_quad(prob0, SolverConfig(max_iter=20))
    assert est.rho <= 1e-9
    np.testing.assert_array_equal(est.H, 0.0)


@pytest.mark.parametrize("eta", [0.3, -0.2, 1.0])
@pytest.mark.parametrize("sign", [1, -1])
def test_energy_program_matches_generic_form(eta, sign):
    prob = _energy()
    generic = psi_hat_quad(np.zeros(3), eta * np.eye(3), sign, prob)
    _, special = _energy_alpha_min(eta, sign, **{k: v for k, v in ENERGY.items()})
    assert generic == pytest.approx(special, rel=1e-7)


def test_energy_opt_vs_generic_optimizer():
    res = energy_opt(**ENERGY)
    est = optimize_quad(_energy(), SolverConfig(max_iter=300), fix_h_zero=True)
    # isotropic estimates are optimal by symmetry, so the generic search cannot do better
    assert res.opt <= est.rho + 1e-9
    assert est.rho <= res.opt * (1 + 1e-2)


def test_energy_ceiling():
    res = energy_opt(8, 1.0, 2.0, 1.0, 5.0, 0.01)
    assert res.opt == pytest.approx(1.5)
    assert res.eta == 0.0
    assert energy_opt(512, 64, 128, 1.0, 1.0, 0.01).opt < 0.5 * (128**2 - 64**2)


def test_energy_psi_domain():
    assert energy_psi(1.0, 0.5, 1, 4, 1.0, 2.0, 1.0, 1.0, 0.01) == math.inf
    with pytest.raises(DomainError):
        energy_opt(4, 2.0, 1.0, 1.0, 1.0, 0.01)


def test_apply_quad_arithmetic():
    est = QuadEstimate(np.zeros(2), 2 * np.eye(2), 0.0, 0.0, 0.1, 1)
    assert apply_quad(est, [1.0, 2.0]) == 5.0
    est2 = QuadEstimate(np.array([1.0, 0.0]), np.zeros((2, 2)), 0.5, 0.0, 0.1, 2)
    assert apply_quad(est2, [[1.0, 7.0], [3.0, 7.0]]) == 2.5
    with pytest.raises(DimensionError):
        apply_quad(est2, [1.0, 2.0])


def test_json_roundtrip():
    prob = _energy()
    est = build_quad_estimate(np.array([0.1, 0.0, -0.1]), np.eye(3), prob)
    back = QuadEstimate.from_json(est.to_json())
    np.testing.assert_array_equal(back.H, est.H)
    assert (back.kappa, back.rho, back.K) == (est.kappa, est.rho, est.K)
    with pytest.raises(DomainError):
        apply_quad(est, np.zeros((1, 3)), problem_digest="x")


@pytest.mark.parametrize("sign", [1, -1])
def test_subgradient_finite_differences(sign):
    prob = gen_consistency_problem(seed=2)
    rng = np.random.default_rng(3)
    h = 0.3 * rng.normal(size=4)
    G = rng.normal(size=(4, 4))
    H = 0.2 * (G + G.T)
    det = psi_hat_quad_details(h, H, sign, prob)
    gh = fd_grad(lambda x: psi_hat_quad(x, H, sign, prob), h, eps=1e-6)
    np.testing.assert_allclose(det.grad_h, gh, rtol=1e-4, atol=1e-6)
    E = np.zeros((4, 4))
    E[0, 1] = E[1, 0] = 1.0
    num = (psi_hat_quad(h, H + 1e-6 * E, sign, prob) - psi_hat_quad(h, H - 1e-6 * E, sign, prob)) / 2e-6
    assert float(np.vdot(det.grad_H, E)) == pytest.approx(num, rel=1e-4, abs=1e-6)


def test_consistency_curve_nonincreasing():
    prob = gen_consistency_problem(seed=0)
    ests = opt_curve(prob, [10, 100, 1000], SolverConfig(max_iter=60))
    rhos = [e.rho for e in ests]
    assert all(a >= b - 1e-9 for a, b in zip(rhos, rhos[1:]))
    assert rhos[-1] < rhos[0]


def test_sobolev_operator_norm():
    m = 16
    S = sobolev_operator(m)
    t = np.arange(1, m + 1) / m
    # a linear function has no curvature: only the value and slope rows survive
    u = 0.5 + 2.0 * t
    Su = S @ u
    assert Su[0] == pytest.approx(u[0])
    assert Su[1] == pytest.approx(2.0)
    np.testing.assert_allclose(Su[2:], 0.0, atol=1e-9)


def test_indirect_generator():
    prob, P, S = gen_indirect_problem(d=6, m=10, seed=1)
    assert prob.A.shape == (6, 11)
    s = np.linalg.svd(P, compute_uv=False)
    assert s[0] / s[-1] == pytest.approx(10.0)
    prob2, P2, _ = gen_indirect_problem(d=6, m=10, seed=1)
    np.testing.assert_array_equal(P, P2)
    with pytest.raises(DomainError):
        gen_indirect_problem(d=10, m=10)
