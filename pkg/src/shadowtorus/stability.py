"""Expansivity, the Lewowicz functional and semiconjugacies built by shadowing.

A homeomorphism ``g`` close to ``f`` in the metric ``rho`` has orbits that are
``d``-pseudotrajectories of ``f``.  Shadowing each ``g``-orbit segment through a
grid point ``p`` with a true ``f``-orbit gives a value ``h(p)``; on the grid this
approximates the semiconjugacy ``f o h = h o g`` with ``h`` close to the identity.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import qmc

from .errors import Exhausted, PreconditionRho, ShadowFailed
from .lyapunov import LyapPair, ParameterChain, _jsonable, derive_parameter_chain
from .orbits import grid_points, rho_distance, step_defects
from .shadow import SolverConfig, shadow_finite, shadow_orbit
from .systems import PERTURBED, SystemSpec, eval_forward, eval_inverse, rho_bound
from .torus import local_disp, local_disp_many, reduce_point, torus_dist

A_GRID_SIZE = 97  # 2^0 down to 2^-24
MIN_SEP = 1e-6
MAX_SEP = 1e-1


# --- expansivity -------------------------------------------------------------------

@dataclass
class ExpansivityEstimate:
    """Largest grid value ``a`` exceeded by the separation of every sampled pair."""

    K: int
    n_pairs: int
    a_est: float
    min_separation: float
    worst_pair: tuple
    histogram: list  # histogram[t] = number of pairs first separating beyond a_est at |k| = t

    def to_dict(self) -> dict:
        return _jsonable({"K": self.K, "n_pairs": self.n_pairs, "a_est": self.a_est,
                          "min_separation": self.min_separation, "worst_pair": self.worst_pair,
                          "histogram": self.histogram})


def a_grid() -> np.ndarray:
    """Candidate expansivity constants ``2^(-j/4)``, decreasing."""
    return 2.0 ** (-np.arange(A_GRID_SIZE) / 4)


def _sample_pairs(frame, n: int, seed: int):
    """Pairs ``(p, p + s u)`` from a scrambled Halton sequence.

    ``s`` is log-uniform on ``[1e-6, 1e-1]`` and ``u`` a uniform direction.  The
    sequence has the prefix property, so a larger sample contains a smaller one.
    """
    H = qmc.Halton(d=4, scramble=True, seed=seed).random(n)
    P = H[:, :2]
    s = MIN_SEP * (MAX_SEP / MIN_SEP) ** H[:, 2]
    th = 2 * math.pi * H[:, 3]
    Q = reduce_point(P + s[:, None] * np.column_stack([np.cos(th), np.sin(th)]))
    return P, Q


def separation_profile(sys: SystemSpec, P, Q, K: int) -> np.ndarray:
    """``D[i, K + k] = dist(f^k p_i, f^k q_i)`` for ``|k| <= K``."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    D = np.empty((len(P), 2 * K + 1))
    D[:, K] = torus_dist(P, Q)
    fp, fq, bp, bq = P, Q, P, Q
    for k in range(1, K + 1):
        fp, fq = eval_forward(sys, fp), eval_forward(sys, fq)
        bp, bq = eval_inverse(sys, bp), eval_inverse(sys, bq)
        D[:, K + k] = torus_dist(fp, fq)
        D[:, K - k] = torus_dist(bp, bq)
    return D


def estimate_expansivity(sys: SystemSpec, K: int, n_pairs: int, seed: int = 0) -> ExpansivityEstimate:
    """Empirical expansivity constant over ``n_pairs`` pairs and horizon ``|k| <= K``."""
    if K < 1:
        raise ValueError("K must be at least 1")
    if n_pairs < 1:
        raise ValueError("n_pairs must be at least 1")
    P, Q = _sample_pairs(sys.frame, n_pairs, seed)
    D = separation_profile(sys, P, Q, K)
    sep = D.max(axis=1)
    i_min = int(np.argmin(sep))
    smin = float(sep[i_min])
    grid = a_grid()
    below = grid[grid < smin]
    a = float(below[0]) if len(below) else 0.0
    hist = [0] * (K + 1)
    if a > 0:
        absk = np.abs(np.arange(-K, K + 1))
        first = np.where(D > a, absk[None, :], K + 1).min(axis=1)
        for t in first:
            hist[int(t)] += 1
    return ExpansivityEstimate(K, n_pairs, a, smin, (tuple(map(float, P[i_min])), tuple(map(float, Q[i_min]))), hist)


# --- Lewowicz functional -----------------------------------------------------------

def lewowicz_functional(pair: LyapPair, p, q) -> float:
    """``V(p, q) - W(p, q)``; raises OutOfChart when ``q`` is not in the chart about ``p``."""
    w, v = local_disp(pair.frame, p, q)
    return abs(v) - abs(w)


@dataclass
class MonotoneCheck:
    n_pairs: int
    n_steps: int
    violations: int
    worst_ratio: float  # min over steps of functional(k+1) / functional(k)
    witness: Optional[tuple] = None

    @property
    def passed(self) -> bool:
        return self.violations == 0


def monotone_along_orbits(sys: SystemSpec, pair: LyapPair, n_pairs: int = 2000, max_steps: int = 40,
                          scale: float = 1e-3, seed: int = 0) -> MonotoneCheck:
    """Check that ``V - W`` strictly increases along forward orbits of pairs with ``V > W > 0``.

    Each orbit pair is followed until the displacement leaves half the chart.
    """
    rng = np.random.default_rng(seed)
    frame = sys.frame
    P = rng.random((n_pairs, 2))
    v = scale * rng.uniform(0.05, 1.0, n_pairs) * rng.choice([-1.0, 1.0], n_pairs)
    w = np.abs(v) * rng.uniform(0.01, 0.99, n_pairs) * rng.choice([-1.0, 1.0], n_pairs)
    Q = reduce_point(P + frame.from_chart(np.column_stack([w, v])))
    alive = np.ones(n_pairs, dtype=bool)
    Z = local_disp_many(frame, P, Q)
    L = np.abs(Z[:, 1]) - np.abs(Z[:, 0])
    steps = viol = 0
    worst, witness = math.inf, None
    lim = 0.5 * frame.chart_radius
    for _ in range(max_steps):
        P, Q = eval_forward(sys, P), eval_forward(sys, Q)
        Z = local_disp_many(frame, P, Q)
        alive &= np.hypot(Z[:, 0], Z[:, 1]) < lim
        if not alive.any():
            break
        L1 = np.abs(Z[:, 1]) - np.abs(Z[:, 0])
        ratio = np.where(alive, L1 / L, np.inf)
        bad = alive & ~(L1 > L)
        steps += int(alive.sum())
        viol += int(bad.sum())
        i = int(np.argmin(ratio))
        if ratio[i] < worst:
            worst, witness = float(ratio[i]), (tuple(map(float, P[i])), tuple(map(float, Q[i])))
        L = L1
    return MonotoneCheck(n_pairs, steps, viol, worst, witness)


# --- semiconjugacy -----------------------------------------------------------------

@dataclass
class ConjugacySample:
    """``h`` on the ``grid_n x grid_n`` grid: ``h_values[i]`` is the value at ``points[i]``."""

    grid_n: int
    points: np.ndarray
    h_values: np.ndarray
    step_defects: np.ndarray  # max f-step defect of each g-orbit segment
    achieved_eps: np.ndarray
    box_widths: np.ndarray
    defect_conj: float = math.nan
    defect_id: float = math.nan

    def write_csv(self, path) -> None:
        import csv
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["p_x", "p_y", "h_x", "h_y", "step_defect", "achieved_eps"])
            for p, h, s, e in zip(self.points, self.h_values, self.step_defects, self.achieved_eps):
                wr.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(h[0])), repr(float(h[1])),
                             repr(float(s)), repr(float(e))])


@dataclass
class ConjugacyDefect:
    defect_conj: float
    defect_id: float
    witness_conj: tuple
    witness_id: tuple
    nn_distance: float  # max distance from g(p) to its nearest grid point
    interpolation_bound: float

    def __iter__(self):
        yield self.defect_conj
        yield self.defect_id


def _nearest_index(grid_n: int, q) -> np.ndarray:
    ij = np.rint(reduce_point(q) * grid_n).astype(int) % grid_n
    return ij[..., 0] * grid_n + ij[..., 1]


def conjugacy_defect(sys_f: SystemSpec, sys_g: SystemSpec, sample: ConjugacySample) -> ConjugacyDefect:
    """Sup over the grid of ``dist(f(h(p)), h(g(p)))`` and of ``dist(h(p), p)``.

    ``h(g(p))`` is looked up at the grid point nearest ``g(p)``.  Since every
    value of ``h`` lies within ``defect_id`` of its argument, the lookup changes
    ``h(g(p))`` by at most ``|g(p) - nearest| + 2 defect_id``, reported as
    ``interpolation_bound``.
    """
    pts, H = sample.points, sample.h_values
    n = sample.grid_n
    row = np.full(n * n, -1)
    row[_nearest_index(n, pts)] = np.arange(len(pts))
    if np.any(row < 0):
        raise ValueError("sample does not cover the grid")
    gp = eval_forward(sys_g, pts)
    idx = row[_nearest_index(n, gp)]
    nn = torus_dist(gp, pts[idx])
    conj = torus_dist(eval_forward(sys_f, H), H[idx])
    ident = torus_dist(H, pts)
    ic, ii = int(np.argmax(conj)), int(np.argmax(ident))
    d_id = float(ident[ii])
    return ConjugacyDefect(float(conj[ic]), d_id, tuple(pts[ic]), tuple(pts[ii]),
                           float(nn.max()), float(nn.max()) + 2 * d_id)


@dataclass
class StabilityReport:
    eps: float
    K: int
    grid_n: int
    rho: float
    rho_grid: float
    rho_bound: float
    d: float
    shadow_params: dict
    defect_conj: float
    defect_id: float
    box_width: float
    interpolation_bound: float
    max_step_defect: float
    max_achieved_eps: float
    certificates: list = field(default_factory=list)

    @property
    def conj_tolerance(self) -> float:
        return self.eps + self.box_width + self.interpolation_bound

    @property
    def passed(self) -> bool:
        return self.defect_id < self.eps and self.defect_conj < self.conj_tolerance

    def to_dict(self) -> dict:
        return _jsonable({
            "eps": self.eps, "K": self.K, "grid_n": self.grid_n,
            "rho": self.rho, "rho_grid": self.rho_grid, "rho_bound": self.rho_bound, "d": self.d,
            "shadow_params": self.shadow_params,
            "defect_conj": self.defect_conj, "defect_id": self.defect_id,
            "box_width": self.box_width, "interpolation_bound": self.interpolation_bound,
            "conj_tolerance": self.conj_tolerance, "passed": self.passed,
            "max_step_defect": self.max_step_defect, "max_achieved_eps": self.max_achieved_eps,
            "certificates": self.certificates,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def rho_estimate(sys_f: SystemSpec, sys_g: SystemSpec, grid_n: int = 64) -> tuple:
    """``(rho, rho_grid, rho_bound)``: the grid estimate, and the analytic bound when ``g`` perturbs ``f``."""
    rg = rho_distance(sys_f, sys_g, grid_n)
    rb = rho_bound(sys_g) if sys_g.variant == PERTURBED and sys_g.base == sys_f else 0.0
    return max(rg, rb), rg, rb


def g_segments(sys_g: SystemSpec, points, K: int) -> np.ndarray:
    """``S[i] = (g^-K(p_i), ..., p_i, ..., g^K(p_i))``, shape ``(N, 2K+1, 2)``."""
    P = reduce_point(np.asarray(points, dtype=float).reshape(-1, 2))
    S = np.empty((len(P), 2 * K + 1, 2))
    S[:, K] = P
    for k in range(1, K + 1):
        S[:, K + k] = eval_forward(sys_g, S[:, K + k - 1])
        S[:, K - k] = eval_inverse(sys_g, S[:, K - k + 1])
    return S


def g_segment(sys_g: SystemSpec, p, K: int) -> np.ndarray:
    """``g^-K(p), ..., p, ..., g^K(p)`` as an array of shape ``(2K+1, 2)``."""
    return g_segments(sys_g, p, K)[0]


def build_semiconjugacy(sys_f: SystemSpec, sys_g: SystemSpec, eps: float, grid_n: int, K: int = 25,
                        chain: Optional[ParameterChain] = None, pair: Optional[LyapPair] = None,
                        config: Optional[SolverConfig] = None, rho_grid_n: int = 64):
    """Shadow the ``g``-orbit segment through each grid point and read off ``h(p)`` at its centre.

    Returns ``(ConjugacySample, StabilityReport)``.  Raises PreconditionRho when
    ``rho(f, g)`` exceeds the ``d`` of the parameter chain and ShadowFailed(p)
    when a segment cannot be shadowed.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    if grid_n < 1:
        raise ValueError("grid_n must be at least 1")
    pair = pair or LyapPair(sys_f.frame)
    chain = chain or derive_parameter_chain(sys_f, pair, eps)
    rho, rg, rb = rho_estimate(sys_f, sys_g, rho_grid_n)
    if rho > chain.d:
        raise PreconditionRho(f"rho(f, g) = {rho:.6g} exceeds d = {chain.d:.6g}")
    cfg = config or SolverConfig()
    pts = grid_points(grid_n)
    n = len(pts)
    H = np.empty((n, 2))
    sdef = np.empty(n)
    aeps = np.empty(n)
    widths = np.empty(n)
    certs = []
    segs = g_segments(sys_g, pts, K)
    for i, p in enumerate(pts):
        seg = segs[i]
        sdef[i] = float(step_defects(sys_f, seg).max())
        if not sdef[i] < chain.d:
            raise PreconditionRho(f"g-orbit through {tuple(p)} has an f-step defect {sdef[i]:.6g} >= d = {chain.d:.6g}")
        try:
            res = shadow_finite(sys_f, pair, seg, chain.delta1, chain.delta2, cfg)
        except (Exhausted, ShadowFailed) as exc:
            raise ShadowFailed(f"shadowing failed at grid point {tuple(p)}: {exc}", point=tuple(p)) from exc
        H[i] = shadow_orbit(sys_f, res, upto=K)[K]
        aeps[i] = res.achieved_eps
        widths[i] = res.certificate["terminal_box_width"]
        certs.append({"p": [float(p[0]), float(p[1])], "h": [float(H[i, 0]), float(H[i, 1])],
                      "achieved_eps": aeps[i], "step_defect": sdef[i], "dps": res.certificate["dps"],
                      "terminal_box_width": widths[i], "sweeps": res.certificate["sweeps"]})
    sample = ConjugacySample(grid_n, pts, H, sdef, aeps, widths)
    dfc = conjugacy_defect(sys_f, sys_g, sample)
    sample.defect_conj, sample.defect_id = dfc.defect_conj, dfc.defect_id
    report = StabilityReport(
        eps=eps, K=K, grid_n=grid_n, rho=rho, rho_grid=rg, rho_bound=rb, d=chain.d,
        shadow_params={"Delta0": chain.Delta0, "Delta": chain.Delta, "delta1": chain.delta1,
                       "delta2": chain.delta2, "solver": cfg.to_dict()},
        defect_conj=dfc.defect_conj, defect_id=dfc.defect_id, box_width=float(widths.max()),
        interpolation_bound=dfc.interpolation_bound, max_step_defect=float(sdef.max()),
        max_achieved_eps=float(aeps.max()), certificates=certs,
    )
    return sample, report
