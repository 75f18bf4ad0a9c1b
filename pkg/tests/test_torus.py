import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shadowtorus.errors import OutOfChart
from shadowtorus.torus import EigenFrame, chart_point, local_disp, reduce_point, torus_dist

coord = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False)
point = st.tuples(coord, coord)


@pytest.fixture(scope="module")
def frame():
    return EigenFrame.from_matrix()


def test_eigenvalues(frame):
    assert frame.eig_contract == pytest.approx((3 - math.sqrt(5)) / 2, abs=1e-15)
    assert frame.eig_expand == pytest.approx((3 + math.sqrt(5)) / 2, abs=1e-15)
    assert frame.eig_contract * frame.eig_expand == pytest.approx(1.0, abs=1e-14)
    A = frame.A
    assert np.allclose(A @ frame.u_contract, frame.eig_contract * frame.u_contract, atol=1e-14)
    assert np.allclose(A @ frame.u_expand, frame.eig_expand * frame.u_expand, atol=1e-14)


def test_orthonormal_frame_has_unit_condition(frame):
    assert frame.cond == pytest.approx(1.0, abs=1e-12)
    assert frame.chart_radius == pytest.approx(0.25, abs=1e-12)


@pytest.mark.parametrize("A", [((1, 1), (1, 1)), ((2, 1), (1, 2)), ((1, 0), (0, 1)), ((2, 0.5), (1, 1))])
def test_rejects_bad_matrices(A):
    with pytest.raises(ValueError):
        EigenFrame.from_matrix(A)


def test_other_hyperbolic_matrix():
    fr = EigenFrame.from_matrix(((3, 1), (2, 1)))
    assert fr.eig_contract * fr.eig_expand == pytest.approx(1.0)
    assert fr.chart_radius <= 0.25


def test_torus_dist_examples():
    assert torus_dist([0.3, 0.4], [0.3, 0.4]) == 0.0
    assert torus_dist([0.95, 0.0], [0.05, 0.0]) == pytest.approx(0.1)
    assert torus_dist([0.0, 0.0], [0.5, 0.5]) == pytest.approx(math.sqrt(0.5))


@given(point, point, point)
@settings(max_examples=200, deadline=None)
def test_torus_dist_is_a_metric(p, q, s):
    assert torus_dist(p, q) == pytest.approx(torus_dist(q, p), abs=1e-15)
    assert torus_dist(p, q) >= 0
    assert torus_dist(p, s) <= torus_dist(p, q) + torus_dist(q, s) + 1e-12
    assert torus_dist(p, q) <= math.sqrt(0.5) + 1e-12


@given(point)
def test_reduce_point_lands_in_unit_square(p):
    r = reduce_point(p)
    assert np.all(r >= 0) and np.all(r < 1)
    assert torus_dist(r, p) < 1e-12


def test_local_disp_examples(frame):
    p = np.array([0.2, 0.7])
    assert local_disp(frame, p, p) == (0.0, 0.0)
    w, v = local_disp(frame, p, p + 0.01 * frame.u_expand)
    assert w == pytest.approx(0.0, abs=1e-15) and v == pytest.approx(0.01, abs=1e-15)
    w, v = local_disp(frame, p, p + 0.01 * frame.u_contract)
    assert w == pytest.approx(0.01, abs=1e-15) and v == pytest.approx(0.0, abs=1e-15)


def test_local_disp_wraps_and_checks_chart(frame):
    w, v = local_disp(frame, [0.99, 0.99], [0.01, 0.01])
    assert math.hypot(w, v) == pytest.approx(math.hypot(0.02, 0.02))
    with pytest.raises(OutOfChart):
        local_disp(frame, [0.0, 0.0], [0.3, 0.0])


@given(point, st.floats(-0.17, 0.17), st.floats(-0.17, 0.17))
def test_local_disp_reconstructs(frame, p, w, v):
    q = chart_point(frame, p, [w, v])
    z = local_disp(frame, reduce_point(p), q)
    assert torus_dist(chart_point(frame, p, z), q) < 1e-12
    assert z[0] == pytest.approx(w, abs=1e-12) and z[1] == pytest.approx(v, abs=1e-12)
