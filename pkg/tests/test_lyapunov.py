import math

import numpy as np
import pytest

from shadowtorus.errors import ChainFailed, OnCore, OutOfChart, OutOfRect
from shadowtorus.lyapunov import (
    GridSpec, LyapPair, RectSpec, RegionClass, check_C1, check_conditions, check_mapping_condition,
    check_retraction_axioms, check_wazewski_pair, classify_chart, classify_region, derive_parameter_chain,
    estimate_d, eval_V, eval_W, retraction_rho0, retraction_sigma,
)
from shadowtorus.systems import eval_forward
from shadowtorus.torus import chart_point, reduce_point

SMALL = GridSpec(base_n=8, support_n=8, core_n=8, face_n=32, interior_n=64)


def test_V_W_examples(pair):
    fr = pair.frame
    p = np.array([0.3, 0.6])
    assert eval_V(pair, p, p) == 0.0 and eval_W(pair, p, p) == 0.0
    q = p + 0.02 * fr.u_expand
    assert eval_V(pair, q, p) == pytest.approx(0.02) and eval_W(pair, q, p) == pytest.approx(0.0, abs=1e-15)
    q = p + 0.01 * fr.u_contract - 0.03 * fr.u_expand
    assert eval_V(pair, q, p) == pytest.approx(0.03) and eval_W(pair, q, p) == pytest.approx(0.01)
    assert eval_V(pair, p, q) == pytest.approx(eval_V(pair, q, p))
    with pytest.raises(OutOfChart):
        eval_V(pair, [0.5, 0.5], [0.0, 0.0])


def test_classification_examples(pair):
    a, b = 0.01, 0.02
    rect = RectSpec((0.2, 0.2), a, b)
    fr = pair.frame
    q = lambda w, v: chart_point(fr, rect.center, [w, v])
    assert classify_region(rect, pair, q(0, 0)) == RegionClass.TCORE
    assert classify_region(rect, pair, q(0.005, 0)) == RegionClass.TCORE
    assert classify_region(rect, pair, q(0, a)) == RegionClass.QFACE
    assert classify_region(rect, pair, q(b, a)) == RegionClass.CORNER
    assert classify_region(rect, pair, q(b, 0.003)) == RegionClass.WFACE
    assert classify_region(rect, pair, q(0.01, 0.003)) == RegionClass.INT0
    assert classify_region(rect, pair, q(0.03, 0.003)) == RegionClass.OUTSIDE


def test_classification_is_exhaustive():
    rng = np.random.default_rng(0)
    a, b = 0.01, 0.02
    Z = rng.uniform(-0.03, 0.03, (2000, 2))
    Z[::4, 1] = a * np.sign(Z[::4, 1])
    Z[1::4, 0] = b
    for w, v in Z:
        c = classify_chart(a, b, w, v)
        inside = abs(w) <= b + 1e-9 and abs(v) <= a + 1e-9
        assert (c == RegionClass.OUTSIDE) == (not inside)


def test_rho0():
    rect = RectSpec((0.0, 0.0), 0.01, 0.02)
    assert retraction_rho0(rect, (0.001, 0.004)) == pytest.approx((0.001, 0.01))
    assert retraction_rho0(rect, (0.001, -0.01)) == pytest.approx((0.001, -0.01))
    with pytest.raises(OnCore):
        retraction_rho0(rect, (0.001, 0.0))
    with pytest.raises(OutOfRect):
        retraction_rho0(rect, (0.05, 0.001))


def test_sigma():
    d1, d2, D = 0.01, 0.01, 0.03
    assert retraction_sigma(None, d1, d2, D, (0.9 * D, 0.5 * d1)) == pytest.approx((d2, 0.5 * d1))
    assert retraction_sigma(None, d1, d2, D, (0.004, 0.002)) == pytest.approx((0.004, 0.002))
    with pytest.raises(OutOfRect):
        retraction_sigma(None, d1, d2, D, (0.04, 0.0))


def test_retraction_axioms():
    rep = check_retraction_axioms({"delta1": 0.01, "delta2": 0.01, "Delta": 0.02}, 256)
    assert rep.passed
    assert rep.details["rho0_idempotence_residual"] == 0.0
    assert rep.details["sigma_V_ratio_min"] >= 1.0
    assert rep.details["Q_face_separation"] == pytest.approx(0.02)


def test_C1(pair, linear):
    rep = check_C1(linear, pair, 0.1)
    D0 = rep.details["Delta0"]
    assert D0 == pytest.approx(0.1 / math.sqrt(2), rel=2e-3)
    assert D0 <= 0.1 and rep.passed and rep.min_margin > 0


def test_linear_margins_match_analytic(linear, pair):
    a, b = linear.alpha, linear.beta
    reps = {r.condition: r for r in check_conditions(linear, pair, 0.01, 0.01, 0.02, SMALL)}
    assert reps["C6"].min_margin == pytest.approx((1 - a) * 0.01, rel=1e-6)
    assert reps["C9"].min_margin == pytest.approx((b - 1) * 0.01, rel=1e-6)
    reps = check_conditions(linear, pair, 0.01, 0.01, 0.03, SMALL)
    assert all(r.passed for r in reps)


def test_mapping_condition_rejects_degenerate(linear, pair):
    with pytest.raises(ValueError):
        check_mapping_condition(linear, pair, "C7", 0.0, 0.01, 0.02, SMALL)


def test_margin_soundness_under_denser_sampling(lewowicz, pair):
    base = check_conditions(lewowicz, pair, 0.004, 0.004, 0.0176, SMALL)
    dense = check_conditions(lewowicz, pair, 0.004, 0.004, 0.0176, SMALL.denser(4))
    for r0, r1 in zip(base, dense):
        if r0.passed and r0.min_margin > r0.resolution_bound:
            assert r1.passed
        assert r1.min_margin <= r0.min_margin + 1e-15


def test_wazewski_pair_linear(linear, pair):
    p = np.array([0.31, 0.47])
    fp = eval_forward(linear, p)
    rep = check_wazewski_pair(linear, pair, p, fp, 0.01, 0.01, SMALL)
    assert rep.passed
    assert rep.details["margin_5"] == pytest.approx((linear.beta - 1) * 0.01, rel=1e-6)
    shifted = reduce_point(fp + 2 * (linear.beta - 1) * 0.01 * linear.frame.u_expand)
    bad = check_wazewski_pair(linear, pair, p, shifted, 0.01, 0.01, SMALL)
    assert not bad.passed and bad.details["margin_5"] < 0


def test_estimate_d_linear_and_zero_drift(linear, pair):
    d = estimate_d(linear, pair, 0.01, 0.01, 0.03, SMALL)
    a, b = linear.alpha, linear.beta
    assert d > 0
    assert d >= 0.5 * min((b - 1) * 0.01, (1 - a) * 0.01) / 2
    rng = np.random.default_rng(1)
    for p in rng.random((200, 2)):
        th = rng.uniform(0, 2 * np.pi)
        pn = reduce_point(eval_forward(linear, p) + rng.uniform(0, d) * np.array([np.cos(th), np.sin(th)]))
        assert check_wazewski_pair(linear, pair, p, pn, 0.01, 0.01, SMALL).passed
    assert estimate_d(linear, pair, 0.02, 0.02, 0.03, SMALL) >= d


def test_parameter_chain_linear(linear, pair):
    ch = derive_parameter_chain(linear, pair, 0.1, SMALL)
    assert ch.d > 0 and ch.delta1 < ch.Delta < ch.Delta0 <= 0.1
    assert all(r.passed for r in ch.reports)
    smaller = derive_parameter_chain(linear, pair, 0.05, SMALL)
    assert smaller.d <= ch.d
    with pytest.raises(ChainFailed):
        derive_parameter_chain(linear, pair, 1e-9, SMALL)


def test_lewowicz_chain_passes_all_conditions(lewowicz_chain):
    ch = lewowicz_chain
    conds = {r.condition: r for r in ch.reports}
    for c in ("C1", "C5", "C6", "C7", "C8", "C9"):
        assert conds[c].passed and conds[c].min_margin > 0
    assert ch.d > 0 and max(ch.delta1, ch.delta2) < ch.Delta


def test_report_serialization(linear, pair):
    import json
    rep = check_conditions(linear, pair, 0.01, 0.01, 0.03, SMALL)[0]
    d = json.loads(rep.to_json())
    for key in ("condition", "params", "min_margin", "witness", "n_samples", "passed"):
        assert key in d
