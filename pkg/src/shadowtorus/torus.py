"""Geometry of the flat torus R^2/Z^2 and the eigenframe chart of a hyperbolic automorphism."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import mpmath
import numpy as np

from .errors import OutOfChart

DEFAULT_MATRIX = ((2, 1), (1, 1))


class LocalDisp(NamedTuple):
    """Displacement in the eigenframe: ``w`` along the contracting, ``v`` along the expanding direction."""

    w: float
    v: float


def reduce_point(p) -> np.ndarray:
    """Reduce coordinates mod 1 into [0, 1)."""
    p = np.asarray(p, dtype=float)
    r = p - np.floor(p)
    # x - floor(x) can round up to exactly 1.0 for tiny negative x
    return np.where(r >= 1.0, 0.0, r)


def wrap(d):
    """Nearest-lift representative of a displacement, componentwise in [-1/2, 1/2]."""
    d = np.asarray(d, dtype=float)
    return d - np.rint(d)


def torus_dist(p, q):
    """Flat distance on R^2/Z^2 (vectorized over leading axes)."""
    d = wrap(np.asarray(q, dtype=float) - np.asarray(p, dtype=float))
    return np.hypot(d[..., 0], d[..., 1])


def _unit_eigvec(A: np.ndarray, lam: float) -> np.ndarray:
    a, b = A[0]
    c, d = A[1]
    # pick the better conditioned of the two null vectors of A - lam I
    v1 = np.array([b, lam - a], dtype=float)
    v2 = np.array([lam - d, c], dtype=float)
    v = v1 if np.linalg.norm(v1) >= np.linalg.norm(v2) else v2
    v = v / np.linalg.norm(v)
    if v[0] < 0 or (v[0] == 0 and v[1] < 0):
        v = -v
    return v


@dataclass(frozen=True)
class EigenFrame:
    """Eigen-data of an integer unimodular hyperbolic matrix with positive trace."""

    matrix_A: tuple
    eig_contract: float
    eig_expand: float
    u_contract: np.ndarray = field(repr=False)
    u_expand: np.ndarray = field(repr=False)
    chart: np.ndarray = field(repr=False)
    chart_inv: np.ndarray = field(repr=False)

    @classmethod
    def from_matrix(cls, A=DEFAULT_MATRIX) -> "EigenFrame":
        Ai = np.asarray(A)
        if Ai.shape != (2, 2) or not np.all(Ai == np.round(Ai)):
            raise ValueError(f"A must be a 2x2 integer matrix, got {A!r}")
        Ai = Ai.astype(int)
        det = int(Ai[0, 0] * Ai[1, 1] - Ai[0, 1] * Ai[1, 0])
        if det != 1:
            raise ValueError(f"det(A) must be 1, got {det}")
        tr = int(Ai[0, 0] + Ai[1, 1])
        if tr <= 2:
            raise ValueError(f"A must be hyperbolic with positive eigenvalues (trace > 2), got trace {tr}")
        disc = np.sqrt(tr * tr - 4.0)
        alpha = (tr - disc) / 2.0
        beta = (tr + disc) / 2.0
        uc = _unit_eigvec(Ai.astype(float), alpha)
        ue = _unit_eigvec(Ai.astype(float), beta)
        E = np.column_stack([uc, ue])
        Einv = np.linalg.inv(E)
        for arr in (uc, ue, E, Einv):
            arr.setflags(write=False)
        return cls(tuple(map(tuple, Ai.tolist())), float(alpha), float(beta), uc, ue, E, Einv)

    @property
    def A(self) -> np.ndarray:
        return np.array(self.matrix_A, dtype=float)

    @property
    def A_inv(self) -> np.ndarray:
        (a, b), (c, d) = self.matrix_A
        return np.array([[d, -b], [-c, a]], dtype=float)

    @property
    def cond(self) -> float:
        return float(np.linalg.cond(self.chart))

    @property
    def chart_radius(self) -> float:
        return 0.25 / self.cond

    @property
    def square_norm(self) -> float:
        """Largest Euclidean norm of ``E (s, t)`` over ``|s|, |t| <= 1``."""
        corners = np.array([[1, 1], [1, -1]], dtype=float)
        return float(np.max(np.linalg.norm(corners @ self.chart.T, axis=1)))

    def to_chart(self, d):
        """Standard-coordinate displacement(s) -> (w, v)."""
        return np.asarray(d, dtype=float) @ self.chart_inv.T

    def from_chart(self, z):
        """(w, v) -> standard-coordinate displacement(s)."""
        return np.asarray(z, dtype=float) @ self.chart.T

    def mp_consts(self):
        """(alpha, beta, E, E^-1) as mpf values at the current working precision."""
        return _mp_frame(self.matrix_A, mpmath.mp.dps)

    def to_dict(self) -> dict:
        return {"matrix_A": [list(r) for r in self.matrix_A]}


@lru_cache(maxsize=32)
def _mp_frame(A, dps):
    with mpmath.workdps(dps):
        (a, b), (c, d) = A
        tr = mpmath.mpf(a + d)
        disc = mpmath.sqrt(tr * tr - 4)
        alpha = (tr - disc) / 2
        beta = (tr + disc) / 2

        def unit(lam):
            v1 = (mpmath.mpf(b), lam - a)
            v2 = (lam - d, mpmath.mpf(c))
            n1 = mpmath.sqrt(v1[0] ** 2 + v1[1] ** 2)
            n2 = mpmath.sqrt(v2[0] ** 2 + v2[1] ** 2)
            v, n = (v1, n1) if n1 >= n2 else (v2, n2)
            v = (v[0] / n, v[1] / n)
            if v[0] < 0 or (v[0] == 0 and v[1] < 0):
                v = (-v[0], -v[1])
            return v

        uc, ue = unit(alpha), unit(beta)
        E = ((uc[0], ue[0]), (uc[1], ue[1]))
        det = E[0][0] * E[1][1] - E[0][1] * E[1][0]
        Einv = ((E[1][1] / det, -E[0][1] / det), (-E[1][0] / det, E[0][0] / det))
        return alpha, beta, E, Einv


def local_disp(frame: EigenFrame, p, q) -> LocalDisp:
    """Eigenframe coordinates of ``q`` seen from ``p`` through the nearest lift."""
    if torus_dist(p, q) >= frame.chart_radius:
        raise OutOfChart(f"points {tuple(p)} and {tuple(q)} are farther apart than the chart radius {frame.chart_radius:.4g}")
    w, v = frame.to_chart(wrap(np.asarray(q, dtype=float) - np.asarray(p, dtype=float)))
    return LocalDisp(float(w), float(v))


def local_disp_many(frame: EigenFrame, p, q) -> np.ndarray:
    """Vectorized ``local_disp`` without the chart check; returns ``(..., 2)`` of (w, v)."""
    return frame.to_chart(wrap(np.asarray(q, dtype=float) - np.asarray(p, dtype=float)))


def chart_point(frame: EigenFrame, p, z) -> np.ndarray:
    """Torus point ``p + E z`` (vectorized over leading axes of ``z``)."""
    return reduce_point(np.asarray(p, dtype=float) + frame.from_chart(z))


# --- mpmath scalar helpers -------------------------------------------------

def mp_reduce(x):
    return x - mpmath.floor(x)


def mp_local_disp(frame: EigenFrame, p, q):
    """High-precision ``local_disp`` for scalar mpf pairs (no chart check)."""
    _, _, _, Einv = frame.mp_consts()
    dx = q[0] - p[0]
    dy = q[1] - p[1]
    dx -= mpmath.nint(dx)
    dy -= mpmath.nint(dy)
    return (Einv[0][0] * dx + Einv[0][1] * dy, Einv[1][0] * dx + Einv[1][1] * dy)


def mp_chart_point(frame: EigenFrame, p, z):
    _, _, E, _ = frame.mp_consts()
    x = p[0] + E[0][0] * z[0] + E[0][1] * z[1]
    y = p[1] + E[1][0] * z[0] + E[1][1] * z[1]
    return (mp_reduce(x), mp_reduce(y))


def mp_torus_dist(p, q) -> float:
    dx = q[0] - p[0]
    dy = q[1] - p[1]
    dx -= mpmath.nint(dx)
    dy -= mpmath.nint(dy)
    return float(mpmath.sqrt(dx * dx + dy * dy))
