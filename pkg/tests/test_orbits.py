import numpy as np
import pytest

from shadowtorus.orbits import (
    Pseudotrajectory, generate_pseudotrajectory, grid_points, is_pseudotrajectory, read_csv, rho_distance,
    step_defects, write_csv,
)
from shadowtorus.systems import eval_forward, iterate, make_perturbation
from shadowtorus.torus import reduce_point


def test_zero_noise_gives_true_orbit(lewowicz):
    pt = generate_pseudotrajectory(lewowicz, [0.1, 0.2], 0.0, 10, seed=0)
    assert np.max(step_defects(lewowicz, pt.points)) == 0.0
    assert is_pseudotrajectory(lewowicz, pt, 1e-9) is None


def test_determinism_and_strictness(lewowicz):
    a = generate_pseudotrajectory(lewowicz, [0.3, 0.4], 1e-3, 5, seed=7)
    b = generate_pseudotrajectory(lewowicz, [0.3, 0.4], 1e-3, 5, seed=7)
    assert np.array_equal(a.points, b.points)
    assert a.m == 5 and len(a) == 6
    assert is_pseudotrajectory(lewowicz, a, 1e-3) is None
    assert np.all(step_defects(lewowicz, a.points) < 1e-3)


def test_half_threshold_fails_for_most_seeds(linear):
    fails = sum(is_pseudotrajectory(linear, generate_pseudotrajectory(linear, [0.5, 0.5], 0.01, 20, s), 0.005) is not None
                for s in range(1000))
    assert fails >= 999


def test_first_violating_index(linear):
    pts = iterate_orbit(linear, [0.2, 0.3], 6)
    pts[3] = reduce_point(pts[3] + np.array([2e-3, 0.0]))
    assert is_pseudotrajectory(linear, pts, 1e-3) == 3


def iterate_orbit(s, p, m):
    out = [reduce_point(p)]
    for _ in range(m):
        out.append(eval_forward(s, out[-1]))
    return np.array(out)


def test_vacuous_cases(linear):
    assert is_pseudotrajectory(linear, np.zeros((0, 2)), 1.0) is None
    assert is_pseudotrajectory(linear, np.zeros((1, 2)), 1.0) is None


def test_bad_arguments(linear):
    with pytest.raises(ValueError):
        generate_pseudotrajectory(linear, [0, 0], -1.0, 3)
    with pytest.raises(ValueError):
        generate_pseudotrajectory(linear, [0, 0], 0.1, 0)
    with pytest.raises(ValueError):
        rho_distance(linear, linear, 1)


def test_rho_distance(lewowicz):
    assert rho_distance(lewowicz, lewowicz, 8) == 0.0
    g = make_perturbation(lewowicz, {"sup_norm": 1e-3}, seed=4)
    values = [rho_distance(lewowicz, g, n) for n in (8, 16, 32, 64)]
    assert values == sorted(values)  # nested grids
    assert 0 < values[-1] <= 2e-3


def test_grid_points():
    g = grid_points(4)
    assert g.shape == (16, 2)
    assert set(np.round(g[:, 0] * 4).astype(int)) == {0, 1, 2, 3}


def test_csv_roundtrip(tmp_path, lewowicz):
    pt = generate_pseudotrajectory(lewowicz, [0.3, 0.4], 1e-3, 100, seed=1)
    f = tmp_path / "pt.csv"
    write_csv(f, pt)
    lines = f.read_text().splitlines()
    assert lines[0] == "k,x,y" and len(lines) == 102
    back = read_csv(f, 1e-3)
    assert np.array_equal(back.points, pt.points)
    assert isinstance(back, Pseudotrajectory)
