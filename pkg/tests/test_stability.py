import numpy as np
import pytest

from shadowtorus.errors import OutOfChart, PreconditionRho
from shadowtorus.lyapunov import GridSpec, LyapPair, derive_parameter_chain
from shadowtorus.orbits import grid_points, is_pseudotrajectory
from shadowtorus.shadow import SolverConfig, shadow_finite
from shadowtorus.stability import (
    ConjugacySample, build_semiconjugacy, conjugacy_defect, estimate_expansivity, g_segment, g_segments,
    lewowicz_functional, monotone_along_orbits, rho_estimate, separation_profile,
)
from shadowtorus.systems import eval_forward, make_perturbation
from shadowtorus.torus import reduce_point, torus_dist

SMALL = GridSpec(base_n=8, support_n=8, core_n=8, face_n=32, interior_n=64)


@pytest.fixture(scope="module")
def linear_chain(linear, pair):
    return derive_parameter_chain(linear, pair, 0.05, SMALL)


def test_expansivity_linear(linear):
    est = estimate_expansivity(linear, 20, 500, seed=0)
    assert est.a_est > 0.1
    assert sum(est.histogram) == 500
    assert len(est.histogram) == 21
    assert est.min_separation > est.a_est


def test_expansivity_nonincreasing_in_sample(lewowicz):
    vals = [estimate_expansivity(lewowicz, 10, n, seed=1).a_est for n in (50, 200, 800)]
    assert vals == sorted(vals, reverse=True)
    assert estimate_expansivity(lewowicz, 10, 200, seed=1).to_dict() == estimate_expansivity(lewowicz, 10, 200, seed=1).to_dict()


def test_expansivity_rejects_bad_horizon(linear):
    with pytest.raises(ValueError):
        estimate_expansivity(linear, 0, 10)


def test_contracting_pair_separates_backward(linear):
    p = np.array([[0.3, 0.3]])
    q = reduce_point(p + 1e-6 * linear.frame.u_contract)
    D = separation_profile(linear, p, q, 10)[0]
    assert D[0] == pytest.approx(1e-6 * linear.beta ** 10, rel=1e-5)
    assert D[-1] == pytest.approx(1e-6 * linear.alpha ** 10, rel=1e-3)


def test_lewowicz_functional_examples(linear, pair):
    fr = linear.frame
    p = np.array([0.4, 0.4])
    assert lewowicz_functional(pair, p, p) == 0.0
    q = p + 0.001 * fr.u_expand
    v0 = lewowicz_functional(pair, p, q)
    assert v0 == pytest.approx(0.001)
    assert lewowicz_functional(pair, eval_forward(linear, p), eval_forward(linear, q)) >= linear.beta * v0 - 1e-15
    q = p + 0.001 * fr.u_contract
    w0 = lewowicz_functional(pair, p, q)
    assert w0 == pytest.approx(-0.001)
    w1 = lewowicz_functional(pair, eval_forward(linear, p), eval_forward(linear, q))
    assert w0 < w1 < 0
    with pytest.raises(OutOfChart):
        lewowicz_functional(pair, [0, 0], [0.5, 0.5])


def test_functional_monotone_on_examples(lewowicz, piecewise, pair):
    for s in (lewowicz, piecewise):
        chk = monotone_along_orbits(s, pair, n_pairs=1000)
        assert chk.passed and chk.n_steps > 1000


def test_segments(lewowicz):
    g = make_perturbation(lewowicz, {"sup_norm": 1e-5}, seed=1)
    pts = grid_points(3)
    S = g_segments(g, pts, 6)
    assert S.shape == (9, 13, 2)
    assert np.array_equal(S[4], g_segment(g, pts[4], 6))
    rho = rho_estimate(lewowicz, g)[0]
    for seg in S:
        assert is_pseudotrajectory(lewowicz, seg, rho * (1 + 1e-9)) is None


def test_identity_semiconjugacy(linear, pair, linear_chain):
    sample, rep = build_semiconjugacy(linear, linear, 0.05, 4, K=5, chain=linear_chain, pair=pair)
    assert rep.rho == 0.0
    assert rep.defect_id <= rep.box_width
    assert rep.defect_conj <= rep.box_width
    assert rep.passed


def test_perturbed_semiconjugacy(linear, pair, linear_chain):
    g = make_perturbation(linear, {"sup_norm": linear_chain.d / 2}, seed=2)
    s5, r5 = build_semiconjugacy(linear, g, 0.05, 4, K=5, chain=linear_chain, pair=pair)
    s10, r10 = build_semiconjugacy(linear, g, 0.05, 4, K=10, chain=linear_chain, pair=pair)
    assert r5.passed and r10.passed
    assert r5.defect_id < 0.05
    assert r10.defect_conj <= r5.defect_conj + r5.box_width
    assert r5.rho <= r5.d


def test_precondition_rho(linear, pair, linear_chain):
    g = make_perturbation(linear, {"sup_norm": linear_chain.d * 3}, seed=2)
    with pytest.raises(PreconditionRho):
        build_semiconjugacy(linear, g, 0.05, 2, K=3, chain=linear_chain, pair=pair)


def test_conjugacy_defect_identity_and_shift(linear):
    n = 8
    pts = grid_points(n)
    zero = np.zeros(len(pts))
    ident = ConjugacySample(n, pts, pts.copy(), zero, zero, zero)
    assert tuple(conjugacy_defect(linear, linear, ident)) == (0.0, 0.0)
    s = 1e-3
    shifted = ConjugacySample(n, pts, reduce_point(pts + s * linear.frame.u_expand), zero, zero, zero)
    res = conjugacy_defect(linear, linear, shifted)
    assert res.defect_conj >= (linear.beta - 1) * s - res.nn_distance - 1e-15
    assert res.defect_id == pytest.approx(s)
    perm = np.random.default_rng(0).permutation(len(pts))
    permuted = ConjugacySample(n, pts[perm], shifted.h_values[perm], zero, zero, zero)
    assert tuple(conjugacy_defect(linear, linear, permuted)) == tuple(res)


def test_uniqueness_across_subdivision_orders(lewowicz, pair):
    g = make_perturbation(lewowicz, {"sup_norm": 1e-6}, seed=3)
    seg = g_segment(g, [0.3, 0.7], 10)
    a = shadow_finite(lewowicz, pair, seg, 0.004, 0.004, SolverConfig(split=4))
    b = shadow_finite(lewowicz, pair, seg, 0.004, 0.004, SolverConfig(split=8))
    width = max(a.certificate["terminal_box_width"], b.certificate["terminal_box_width"])
    assert torus_dist(a.r, b.r) <= 2 * width


def test_sample_csv(tmp_path, linear, pair, linear_chain):
    sample, rep = build_semiconjugacy(linear, linear, 0.05, 2, K=3, chain=linear_chain, pair=pair)
    f = tmp_path / "c.csv"
    sample.write_csv(f)
    lines = f.read_text().splitlines()
    assert lines[0] == "p_x,p_y,h_x,h_y,step_defect,achieved_eps" and len(lines) == 5
    assert '"certificates"' in rep.to_json()
