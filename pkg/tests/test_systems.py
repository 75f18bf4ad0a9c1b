import math

import mpmath
import numpy as np
import pytest

from shadowtorus.errors import InvalidProfile, NotDifferentiable, NotInvertible, SupportTooLarge
from shadowtorus.orbits import rho_distance
from shadowtorus.systems import (
    SystemSpec, eigen_coords, eval_forward, eval_inverse, iterate, jacobian_at, lipschitz_matrix,
    make_cat_system, make_perturbation, mp_forward, mp_inverse, rho_bound,
)
from shadowtorus.torus import local_disp_many, reduce_point, torus_dist


def test_linear_examples(linear):
    assert np.allclose(eval_forward(linear, [0.0, 0.0]), [0.0, 0.0])
    assert np.allclose(eval_forward(linear, [0.25, 0.25]), [0.75, 0.5])
    assert np.allclose(eval_inverse(linear, [0.75, 0.5]), [0.25, 0.25])


def test_origin_is_fixed(lewowicz, piecewise):
    for s in (lewowicz, piecewise):
        assert torus_dist(eval_forward(s, [0.0, 0.0]), [0.0, 0.0]) < 1e-15


def test_group_property(all_systems, lewowicz):
    P = np.random.default_rng(0).random((10_000, 2))
    g = make_perturbation(lewowicz, {"sup_norm": 1e-3}, seed=3)
    for s in all_systems + [g]:
        assert torus_dist(eval_inverse(s, eval_forward(s, P)), P).max() < 1e-10
        assert torus_dist(eval_forward(s, eval_inverse(s, P)), P).max() < 1e-10


def test_matches_linear_action_outside_support(lewowicz, piecewise):
    rng = np.random.default_rng(1)
    P = rng.random((4000, 2))
    for s in (lewowicz, piecewise):
        xy = eigen_coords(s.frame, P)
        far = np.max(np.abs(xy), axis=1) > 0.2
        lin = reduce_point(P[far] @ s.frame.A.T)
        assert torus_dist(eval_forward(s, P[far]), lin).max() < 1e-12
        lin_inv = reduce_point(P[far] @ s.frame.A_inv.T)
        assert torus_dist(eval_inverse(s, P[far]), lin_inv).max() < 1e-12


def test_chart_conjugacy_lewowicz(lewowicz):
    s, pr = lewowicz, lewowicz.profile
    rng = np.random.default_rng(2)
    xy = rng.uniform(-0.06, 0.06, (2000, 2))
    P = reduce_point(s.frame.from_chart(xy))
    x, y = xy[:, 0], xy[:, 1]
    F = np.column_stack([s.alpha * x + pr.lam(x) * pr.mu(y), s.beta * y])
    expect = reduce_point(s.frame.from_chart(F))
    assert torus_dist(eval_forward(s, P), expect).max() < 1e-10


def test_rates_outside_support(all_systems):
    rng = np.random.default_rng(3)
    for s in all_systems:
        P = rng.random((3000, 2))
        xy = eigen_coords(s.frame, P)
        P = P[np.max(np.abs(xy), axis=1) > 0.25]
        z = rng.uniform(-1e-3, 1e-3, (len(P), 2))
        Q = reduce_point(P + s.frame.from_chart(z))
        zi = local_disp_many(s.frame, eval_forward(s, P), eval_forward(s, Q))
        assert np.allclose(np.abs(zi[:, 1]), s.beta * np.abs(z[:, 1]), atol=1e-10)
        assert np.allclose(np.abs(zi[:, 0]), s.alpha * np.abs(z[:, 0]), atol=1e-10)


def test_lewowicz_profile_constraints(lewowicz):
    pr = lewowicz.profile
    a, r = lewowicz.alpha, lewowicz.r
    assert float(pr.h(0.0)) == 0.0
    assert float(pr.h(r)) == pytest.approx(1 - a, abs=1e-14)
    s = np.linspace(-r, r, 10001)
    assert np.all(pr.h(s) >= 0) and np.all(pr.h(s) < 1)
    assert float(pr.lam(r)) == pytest.approx(0.0, abs=1e-14)
    assert float(pr.mu(0.0)) == 1.0 and float(pr.mu(r)) == 0.0
    # lambda' = (1 - alpha) - h
    x = np.linspace(-0.9 * r, 0.9 * r, 101)
    fd = (pr.lam(x + 1e-7) - pr.lam(x - 1e-7)) / 2e-7
    assert np.allclose(fd, (1 - a) - pr.h(x), atol=1e-7)


def test_jacobian_eigenvalues(linear, lewowicz):
    assert sorted(np.linalg.eigvals(jacobian_at(linear, [0.3, 0.1]))) == pytest.approx([linear.alpha, linear.beta])
    ev = sorted(np.linalg.eigvals(jacobian_at(lewowicz, [0.0, 0.0])).real)
    assert ev == pytest.approx([1.0, lewowicz.beta], abs=1e-12)
    far = reduce_point(lewowicz.frame.from_chart([0.1, 0.3]))
    assert np.allclose(jacobian_at(lewowicz, far), np.diag([lewowicz.alpha, lewowicz.beta]))


def _fd_jacobian(s, p, h=1e-6):
    J = np.zeros((2, 2))
    p = np.asarray(p, dtype=float)
    f0 = eval_forward(s, p)
    for j in range(2):
        e = s.frame.from_chart(np.eye(2)[j]) * h
        d = local_disp_many(s.frame, f0, eval_forward(s, p + e)) - local_disp_many(s.frame, f0, eval_forward(s, p - e))
        J[:, j] = d / (2 * h)
    return J


def test_jacobian_matches_finite_differences(lewowicz):
    rng = np.random.default_rng(4)
    g = make_perturbation(lewowicz, {"sup_norm": 1e-3, "angle": 0.7}, seed=1)
    for s in (lewowicz, g):
        for _ in range(40):
            p = reduce_point(s.frame.from_chart(rng.uniform(-0.06, 0.06, 2)))
            assert np.allclose(jacobian_at(s, p), _fd_jacobian(s, p), atol=1e-6)


def test_piecewise_not_differentiable(piecewise):
    with pytest.raises(NotDifferentiable):
        jacobian_at(piecewise, [0.0, 0.0])


def test_piecewise_rates(piecewise):
    pr = piecewise.profile
    lam = pr.lip_lambda
    x = np.linspace(-pr.r, pr.r, 4001)
    m1 = pr.mu1(x)
    m2 = pr.mu2(x)
    q1 = np.diff(m1) / np.diff(x)
    q2 = np.diff(m2) / np.diff(x)
    assert q1.max() <= lam + 1e-12
    assert q2.min() >= 1 / lam - 1e-12
    assert float(pr.mu1(pr.r)) == pytest.approx(piecewise.alpha * pr.r)
    assert float(pr.mu2(pr.r)) == pytest.approx(piecewise.beta * pr.r)


def test_piecewise_requires_lambda_at_least_alpha():
    with pytest.raises(InvalidProfile):
        make_cat_system("PiecewiseHomeo", 0.05, {"lip_lambda": 0.2})


def test_support_too_large():
    with pytest.raises(SupportTooLarge):
        make_cat_system("LewowiczSmooth", 0.3)


def test_lipschitz_matrix_bounds_difference_quotients(all_systems):
    rng = np.random.default_rng(5)
    for s in all_systems:
        M = lipschitz_matrix(s)
        P = reduce_point(s.frame.from_chart(rng.uniform(-0.07, 0.07, (20000, 2))))
        z = rng.uniform(-1e-4, 1e-4, (len(P), 2))
        Q = reduce_point(P + s.frame.from_chart(z))
        dz = local_disp_many(s.frame, eval_forward(s, P), eval_forward(s, Q))
        bound = np.abs(z) @ M.T
        assert np.all(np.abs(dz) <= bound * (1 + 1e-6) + 1e-15)


def test_mp_agrees_with_float(all_systems):
    rng = np.random.default_rng(6)
    for s in all_systems:
        for p in rng.random((20, 2)):
            with mpmath.workdps(40):
                fm = mp_forward(s, p)
                bm = mp_inverse(s, p)
            assert torus_dist([float(fm[0]), float(fm[1])], eval_forward(s, p)) < 1e-14
            assert torus_dist([float(bm[0]), float(bm[1])], eval_inverse(s, p)) < 1e-14


def test_iterate(lewowicz):
    p = np.array([0.123, 0.456])
    assert torus_dist(iterate(lewowicz, iterate(lewowicz, p, 7), -7), p) < 1e-9


def test_serialization_roundtrip(all_systems, lewowicz):
    g = make_perturbation(lewowicz, {"sup_norm": 1e-4}, seed=9)
    P = np.random.default_rng(7).random((200, 2))
    for s in all_systems + [g]:
        s2 = SystemSpec.from_dict(s.to_dict())
        assert s2.to_dict() == s.to_dict()
        assert np.array_equal(eval_forward(s2, P), eval_forward(s, P))


def test_perturbation_examples(lewowicz, linear):
    g0 = make_perturbation(lewowicz, {"sup_norm": 0.0})
    assert rho_distance(lewowicz, g0, 16) == 0.0
    g = make_perturbation(linear, {"sup_norm": 1e-3}, seed=2)
    assert rho_distance(linear, g, 32) <= 2e-3
    assert rho_distance(linear, g, 32) <= rho_bound(g) * (1 + 1e-9)
    with pytest.raises(NotInvertible):
        make_perturbation(linear, {"sup_norm": 1.5 / (2 * math.pi), "max_wavenumber": 1})


def test_perturbation_is_deterministic(lewowicz):
    a = make_perturbation(lewowicz, {"sup_norm": 1e-4}, seed=5)
    b = make_perturbation(lewowicz, {"sup_norm": 1e-4}, seed=5)
    assert a.to_dict() == b.to_dict()
