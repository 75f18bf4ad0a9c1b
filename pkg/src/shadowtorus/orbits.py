"""Pseudotrajectories and the C0 distance between torus homeomorphisms."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .systems import SystemSpec, eval_forward, eval_inverse
from .torus import reduce_point, torus_dist

NOISE_SHRINK = 1e-6


@dataclass
class Pseudotrajectory:
    """Points ``p_0..p_m`` (array of shape ``(m+1, 2)``) and the nominal step defect ``d``."""

    points: np.ndarray
    nominal_d: float

    def __post_init__(self):
        self.points = reduce_point(np.asarray(self.points, dtype=float).reshape(-1, 2))

    def __len__(self):
        return len(self.points)

    @property
    def m(self) -> int:
        return len(self.points) - 1


def disc_noise(rng: np.random.Generator, radius: float, n: int) -> np.ndarray:
    """``n`` samples uniform in the open Euclidean disc of the given radius."""
    rad = radius * np.sqrt(rng.random(n))
    th = rng.uniform(0.0, 2 * np.pi, n)
    return np.column_stack([rad * np.cos(th), rad * np.sin(th)])


def generate_pseudotrajectory(sys: SystemSpec, p0, d: float, m: int, seed: int = 0) -> Pseudotrajectory:
    """``p_{k+1} = f(p_k) + noise`` with noise uniform in the disc of radius ``d (1 - 1e-6)``."""
    if d < 0:
        raise ValueError("d must be nonnegative")
    if m < 1:
        raise ValueError("m must be at least 1")
    rng = np.random.default_rng(seed)
    noise = disc_noise(rng, d * (1 - NOISE_SHRINK), m)
    pts = np.empty((m + 1, 2))
    pts[0] = reduce_point(p0)
    for k in range(m):
        pts[k + 1] = reduce_point(eval_forward(sys, pts[k]) + noise[k])
    return Pseudotrajectory(pts, d)


def step_defects(sys: SystemSpec, points) -> np.ndarray:
    """``dist(p_{k+1}, f(p_k))`` for each step."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        return np.zeros(0)
    return torus_dist(eval_forward(sys, pts[:-1]), pts[1:])


def is_pseudotrajectory(sys: SystemSpec, seq, d: float) -> Optional[int]:
    """None if every step satisfies ``dist(p_{k+1}, f(p_k)) < d``, else the first offending index ``k+1``."""
    pts = seq.points if isinstance(seq, Pseudotrajectory) else seq
    if pts is None or len(pts) < 2:
        return None
    bad = np.nonzero(~(step_defects(sys, pts) < d))[0]
    return None if len(bad) == 0 else int(bad[0]) + 1


def grid_points(n: int) -> np.ndarray:
    """The ``n x n`` grid ``(i/n, j/n)`` as an array of shape ``(n*n, 2)``."""
    t = np.arange(n) / n
    X, Y = np.meshgrid(t, t, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


def rho_distance(sys_f: SystemSpec, sys_g: SystemSpec, grid_n: int = 64) -> float:
    """Grid estimate of ``max(sup dist(f p, g p), sup dist(f^-1 p, g^-1 p))``."""
    if grid_n < 2:
        raise ValueError("grid_n must be at least 2")
    P = grid_points(grid_n)
    fwd = torus_dist(eval_forward(sys_f, P), eval_forward(sys_g, P))
    bwd = torus_dist(eval_inverse(sys_f, P), eval_inverse(sys_g, P))
    return float(max(fwd.max(), bwd.max()))


def write_csv(path, ptraj: Pseudotrajectory) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "x", "y"])
        for k, (x, y) in enumerate(ptraj.points):
            w.writerow([k, repr(float(x)), repr(float(y))])


def read_csv(path, nominal_d: float = float("nan")) -> Pseudotrajectory:
    rows = list(csv.DictReader(Path(path).read_text().splitlines()))
    rows.sort(key=lambda r: int(r["k"]))
    return Pseudotrajectory(np.array([[float(r["x"]), float(r["y"])] for r in rows]), nominal_d)
