"""Finite shadowing by backward box subdivision and high-precision orbit extraction.

Step ``k`` works in the chart about ``p_k``.  The transition map
``T_k(z) = chart_{p_{k+1}}(f(p_k + E z))`` sends chart coordinates at step ``k``
to step ``k+1``.  The solver

1. starts from the shrunk rectangle ``B_m = Int0 P(delta1, delta2, p_m)`` and,
   for ``k = m-1 .. 0``, subdivides ``Int0 P(delta1, delta2, p_k)`` into boxes whose
   padded images land in ``B_{k+1}``.  Padded image of a box = image of its
   centre plus ``M r`` where ``M`` is the componentwise Lipschitz matrix and
   ``r`` the box half-widths.  An empty ``B_k`` means no orbit survives the
   transition ``k -> k+1``;
2. picks the point of ``B_0`` nearest the chart centre and follows the box chain
   forward to get an approximate orbit;
3. turns it into a true orbit in multiprecision arithmetic: the expanding
   coordinate is solved backward from ``v_m`` through ``f^-1`` (which contracts
   it) and the contracting one forward from ``w_0`` through ``f``.  The final
   point is checked by iterating it forward at a precision large enough that
   ``beta^m`` growth of its rounding error stays far below the margins.

Boxes whose expanding width falls below ``res`` can no longer be resolved in
double precision; they are kept when their padded image meets a target box,
and step 3 supplies the missing digits.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import mpmath
import numpy as np

from ._arith import digits_for_orbit
from .errors import Exhausted, ShadowFailed
from .orbits import Pseudotrajectory
from .systems import SystemSpec, eval_forward, lipschitz_matrix, mp_forward, mp_inverse
from .torus import chart_point, local_disp_many, mp_chart_point, mp_local_disp, reduce_point, torus_dist

W, V = 0, 1
SNAP_TOL = 1e-10


@dataclass
class ChartBox:
    """Box ``[w_lo, w_hi] x [v_lo, v_hi]`` in the chart about ``base``."""

    base: tuple
    w_lo: float
    w_hi: float
    v_lo: float
    v_hi: float

    def __post_init__(self):
        if not (self.w_lo <= self.w_hi and self.v_lo <= self.v_hi):
            raise ValueError("empty box")

    @property
    def width(self) -> float:
        return max(self.w_hi - self.w_lo, self.v_hi - self.v_lo)

    def to_dict(self) -> dict:
        return {"base": [float(x) for x in self.base], "w": [self.w_lo, self.w_hi], "v": [self.v_lo, self.v_hi]}


@dataclass(frozen=True)
class SolverConfig:
    max_depth: int = 40
    split: int = 8
    lipschitz: Optional[tuple] = None
    slack: float = 1e-9
    res: float = 1e-12
    round_pad: float = 1e-14
    max_boxes: int = 256
    dps_guard: int = 30
    max_sweeps: int = 12

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")
        if self.split < 2:
            raise ValueError("split must be at least 2")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ShadowResult:
    r: tuple
    achieved_eps: float
    per_step: list
    certificate: dict = field(default_factory=dict)
    r_mp: tuple = ()

    def to_dict(self) -> dict:
        return {
            "r": [float(x) for x in self.r],
            "r_mp": list(self.r_mp),
            "achieved_eps": float(self.achieved_eps),
            "per_step": [float(x) for x in self.per_step],
            "certificate": self.certificate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def lipschitz_bound(sys: SystemSpec) -> float:
    """Chart operator-norm bound on forward increments (2-norm of the componentwise matrix)."""
    return float(np.linalg.norm(lipschitz_matrix(sys), 2))


def sampled_lipschitz(sys: SystemSpec, n: int = 2000, scale: float = 1e-3, seed: int = 0) -> float:
    """Largest sampled chart difference quotient of ``f``."""
    rng = np.random.default_rng(seed)
    P = rng.random((n, 2))
    # concentrate half the samples on the perturbation support
    P[: n // 2] = chart_point(sys.frame, [0.0, 0.0], rng.uniform(-1.2, 1.2, (n // 2, 2)) * max(sys.r, scale))
    dz = rng.normal(size=(n, 2))
    dz *= (scale * rng.random(n) / np.linalg.norm(dz, axis=1))[:, None]
    Q = chart_point(sys.frame, P, dz)
    img = local_disp_many(sys.frame, eval_forward(sys, P), eval_forward(sys, Q))
    return float(np.max(np.linalg.norm(img, axis=1) / np.linalg.norm(dz, axis=1)))


# --- box recursion -------------------------------------------------------------------

def _transition(sys, p, p_next, Z):
    return local_disp_many(sys.frame, p_next, eval_forward(sys, chart_point(sys.frame, p, Z)))


def _merge(boxes: list) -> list:
    """Merge touching boxes that share a full side; deterministic order."""
    tiny = 1e-15
    for axis in (V, W):
        other = 1 - axis
        boxes = sorted(boxes, key=lambda b: (b[0][other], b[1][other], b[0][axis]))
        out = []
        for lo, hi in boxes:
            if out:
                plo, phi = out[-1]
                if plo[other] == lo[other] and phi[other] == hi[other] and lo[axis] <= phi[axis] + tiny:
                    phi = phi.copy()
                    phi[axis] = max(phi[axis], hi[axis])
                    out[-1] = (plo, phi)
                    continue
            out.append((lo.copy(), hi.copy()))
        boxes = out
    return sorted(boxes, key=lambda b: (b[0][W], b[0][V]))


def _preimage(sys, p, p_next, root, targets, M, cfg, res_w):
    """Boxes inside ``root`` whose padded images land in (or, below resolution, meet) the targets.

    Each level is processed as one vectorized batch; undecided boxes are split
    ``cfg.split`` ways along the side that contributes most to the overflowing
    image rows (ties go to ``v``).
    """
    tlo = np.array([t[0] for t in targets])[None]
    thi = np.array([t[1] for t in targets])[None]
    out_lo, out_hi = [], []
    stats = {"evals": 0, "resolution_accepts": 0, "max_depth": 0}
    lo = root[0][None].copy()
    hi = root[1][None].copy()
    depth = 0
    n = cfg.split
    while len(lo):
        c = 0.5 * (lo + hi)
        rad = 0.5 * (hi - lo)
        img = _transition(sys, p, p_next, c)
        stats["evals"] += len(lo)
        irad = rad @ M.T + cfg.round_pad
        ilo, ihi = (img - irad)[:, None], (img + irad)[:, None]
        meets = np.all((ilo < thi) & (ihi > tlo), axis=2).any(axis=1)
        inside = np.all((ilo >= tlo) & (ihi <= thi), axis=2).any(axis=1)
        # overflow relative to the target nearest the centre image
        gap = np.max(np.maximum(tlo - img[:, None], img[:, None] - thi), axis=2)
        j = np.argmin(gap, axis=1)
        over = np.maximum(tlo[0, j] - ilo[:, 0], ihi[:, 0] - thi[0, j]) > 0
        resolvable = np.column_stack([rad[:, W] > res_w, rad[:, V] > cfg.res])
        cand = over & resolvable & (depth < cfg.max_depth)
        undecided = meets & ~inside
        split = undecided & cand.any(axis=1)
        keep = (meets & inside) | (undecided & ~split)
        stats["resolution_accepts"] += int(np.sum(undecided & ~split))
        out_lo.append(lo[keep])
        out_hi.append(hi[keep])
        if not split.any():
            break
        lo, hi, rad, over, cand = lo[split], hi[split], rad[split], over[split], cand[split]
        contrib = (over.astype(float) @ M) * rad
        contrib = np.where(cand, contrib, -1.0)
        ax = np.where(contrib[:, V] >= contrib[:, W], V, W)
        t = np.arange(n + 1) / n
        new_lo, new_hi = [], []
        for a_ in (W, V):
            sel = ax == a_
            if not sel.any():
                continue
            l, h = lo[sel], hi[sel]
            edges = l[:, a_, None] + (h[:, a_] - l[:, a_])[:, None] * t[None]
            edges[:, -1] = h[:, a_]
            L = np.repeat(l, n, axis=0)
            H = np.repeat(h, n, axis=0)
            L[:, a_] = edges[:, :-1].ravel()
            H[:, a_] = edges[:, 1:].ravel()
            new_lo.append(L)
            new_hi.append(H)
        lo = np.concatenate(new_lo)
        hi = np.concatenate(new_hi)
        depth += 1
        stats["max_depth"] = depth
        if len(lo) > 64 * cfg.max_boxes:
            # frontier cap acts as a resolution limit; the extracted orbit is verified later
            c = 0.5 * (lo + hi)
            img = _transition(sys, p, p_next, c)
            irad = (0.5 * (hi - lo)) @ M.T + cfg.round_pad
            ilo, ihi = (img - irad)[:, None], (img + irad)[:, None]
            meets = np.all((ilo < thi) & (ihi > tlo), axis=2).any(axis=1)
            stats["resolution_accepts"] += int(meets.sum())
            stats["frontier_capped"] = True
            out_lo.append(lo[meets])
            out_hi.append(hi[meets])
            break
    lo = np.concatenate(out_lo)
    hi = np.concatenate(out_hi)
    return list(zip(lo, hi)), stats


def _check_chart(sys, ptraj_pts, delta1, delta2):
    d = torus_dist(eval_forward(sys, ptraj_pts[:-1]), ptraj_pts[1:])
    M = lipschitz_matrix(sys)
    reach = d + float(np.max(np.sum(M, axis=1))) * max(delta1, delta2) * sys.frame.square_norm
    bad = np.nonzero(reach >= sys.frame.chart_radius)[0]
    return None if len(bad) == 0 else int(bad[0])


def _root_box(delta1, delta2, slack):
    return (np.array([-delta2 + slack, -delta1 + slack]), np.array([delta2 - slack, delta1 - slack]))


def _classify_exhaustion(sys, pair, pts, k, delta1, delta2):
    from .lyapunov import GridSpec, check_wazewski_pair

    try:
        rep = check_wazewski_pair(sys, pair, pts[k], pts[k + 1], delta1, delta2, GridSpec(face_n=32, interior_n=128))
    except Exception:
        return "wazewski_violated"
    return "resolution" if rep.passed else "wazewski_violated"


def box_chain(sys: SystemSpec, pair, pts: np.ndarray, delta1: float, delta2: float, cfg: SolverConfig):
    """Backward recursion; returns the list ``B_0..B_m`` of box lists and per-step stats."""
    m = len(pts) - 1
    M = np.asarray(cfg.lipschitz if cfg.lipschitz is not None else lipschitz_matrix(sys), dtype=float)
    root = _root_box(delta1, delta2, cfg.slack)
    res_w = max(cfg.res, 1e-6 * delta2)
    chain = [None] * (m + 1)
    chain[m] = [root]
    steps = [None] * (m + 1)
    steps[m] = {"n_boxes": 1, "evals": 0, "resolution_accepts": 0, "max_depth": 0}
    for k in range(m - 1, -1, -1):
        try:
            boxes, st = _preimage(sys, pts[k], pts[k + 1], root, chain[k + 1], M, cfg, res_w)
        except Exhausted as e:
            raise Exhausted(f"box frontier exploded at step {k}", step=k, reason=e.reason) from None
        if not boxes:
            reason = _classify_exhaustion(sys, pair, pts, k, delta1, delta2)
            raise Exhausted(f"no box survives the transition {k} -> {k + 1} ({reason})", step=k, reason=reason)
        boxes = _merge(boxes)
        if len(boxes) > cfg.max_boxes:
            lo = np.min([b[0] for b in boxes], axis=0)
            hi = np.max([b[1] for b in boxes], axis=0)
            boxes = [(lo, hi)]
            st["hull"] = True
        st["n_boxes"] = len(boxes)
        st["v_width"] = float(sum(b[1][V] - b[0][V] for b in boxes))
        st["w_width"] = float(max(b[1][W] - b[0][W] for b in boxes))
        chain[k] = boxes
        steps[k] = st
    return chain, steps, M


def _nearest_box(boxes, z):
    gaps = [float(np.max(np.maximum(np.maximum(lo - z, z - hi), 0.0))) for lo, hi in boxes]
    return boxes[int(np.argmin(gaps))]


def _forward_chain(sys, pts, chain):
    m = len(pts) - 1
    lo, hi = min(chain[0], key=lambda b: float(np.linalg.norm(np.clip(0.0, b[0], b[1]))))
    Z = np.zeros((m + 1, 2))
    Z[0] = np.clip(0.0, lo, hi)
    snaps = 0
    for k in range(m):
        z = _transition(sys, pts[k], pts[k + 1], Z[k][None])[0]
        blo, bhi = _nearest_box(chain[k + 1], z)
        zc = np.clip(z, blo, bhi)
        # ignore rounding-level snaps onto box faces
        snaps += int(np.max(np.abs(zc - z)) > SNAP_TOL)
        Z[k + 1] = zc
    return Z, (lo, hi), snaps


# --- multiprecision extraction ---------------------------------------------------------

def _mp_points(pts):
    return [(mpmath.mpf(float(x)), mpmath.mpf(float(y))) for x, y in pts]


def _ceil_float(x) -> float:
    f = float(x)
    if mpmath.mpf(f) < x:
        f = math.nextafter(f, math.inf)
    return f


def _refine(sys, pts, Z0, delta1, delta2, dps, max_sweeps):
    frame = sys.frame
    m = len(pts) - 1
    with mpmath.workdps(dps):
        P = _mp_points(pts)
        Z = [[mpmath.mpf(float(w)), mpmath.mpf(float(v))] for w, v in Z0]
        tol = mpmath.mpf(10) ** (-(dps - 10))
        sweeps = 0
        for sweeps in range(1, max_sweeps + 1):
            for k in range(m - 1, -1, -1):
                q = mp_inverse(sys, mp_chart_point(frame, P[k + 1], Z[k + 1]))
                Z[k][1] = mp_local_disp(frame, P[k], q)[1]
            gap = mpmath.mpf(0)
            for k in range(m):
                q = mp_forward(sys, mp_chart_point(frame, P[k], Z[k]))
                w, v = mp_local_disp(frame, P[k + 1], q)
                Z[k + 1][0] = w
                gap = max(gap, abs(v - Z[k + 1][1]))
            if gap <= tol:
                break
        r = mp_chart_point(frame, P[0], Z[0])
        return r, sweeps, float(gap)


def _orbit_report(sys, pts, r, delta1, delta2, dps):
    """Chart coordinates and distances of the true orbit of ``r`` along ``pts``."""
    frame = sys.frame
    with mpmath.workdps(dps):
        P = _mp_points(pts)
        q = (mpmath.mpf(r[0]), mpmath.mpf(r[1]))
        coords, dists = [], []
        for k in range(len(pts)):
            if k:
                q = mp_forward(sys, q)
            w, v = mp_local_disp(frame, P[k], q)
            coords.append((float(w), float(v)))
            dx = q[0] - P[k][0]
            dy = q[1] - P[k][1]
            dx -= mpmath.nint(dx)
            dy -= mpmath.nint(dy)
            dists.append(_ceil_float(mpmath.sqrt(dx * dx + dy * dy)))
        return np.array(coords), dists


def orbit_dps(sys: SystemSpec, m: int, guard: int = 30) -> int:
    return digits_for_orbit(m, lipschitz_bound(sys), guard)


def shadow_finite(sys: SystemSpec, pair, ptraj, delta1: float, delta2: float,
                  config: Optional[SolverConfig] = None) -> ShadowResult:
    """A point whose orbit stays in ``Int0 P(delta1, delta2, p_k)`` for ``k = 0..m``."""
    cfg = config or SolverConfig()
    pts = ptraj.points if isinstance(ptraj, Pseudotrajectory) else reduce_point(np.asarray(ptraj, dtype=float).reshape(-1, 2))
    m = len(pts) - 1
    if not (delta1 > cfg.slack and delta2 > cfg.slack):
        raise ValueError("delta1 and delta2 must exceed the strictness slack")
    if m == 0:
        r = tuple(float(x) for x in pts[0])
        return ShadowResult(r, 0.0, [0.0], {"m": 0}, tuple(repr(x) for x in r))
    bad = _check_chart(sys, pts, delta1, delta2)
    if bad is not None:
        raise Exhausted(f"rectangles at steps {bad}, {bad + 1} do not fit in one chart", step=bad,
                        reason="wazewski_violated")
    chain, steps, M = box_chain(sys, pair, pts, delta1, delta2, cfg)
    Z, (blo, bhi), snaps = _forward_chain(sys, pts, chain)
    drift = np.finfo(float).eps * lipschitz_bound(sys) ** m
    if snaps or drift > SNAP_TOL:
        # the double-precision chain cannot resolve the end point: anchor it in the middle of B_m
        Z[m, V] = 0.0
    dps = orbit_dps(sys, m, cfg.dps_guard)
    r_mp, sweeps, gap = _refine(sys, pts, Z, delta1, delta2, dps, cfg.max_sweeps)
    coords, dists = _orbit_report(sys, pts, r_mp, delta1, delta2, dps)
    inside = (np.abs(coords[:, W]) < delta2) & (np.abs(coords[:, V]) < delta1)
    if not inside.all():
        k = int(np.nonzero(~inside)[0][0])
        raise ShadowFailed(f"extracted orbit leaves Int0 P at step {k}", point=tuple(float(x) for x in r_mp))
    with mpmath.workdps(dps):
        r_str = tuple(mpmath.nstr(x, dps, strip_zeros=False) for x in r_mp)
    r = tuple(float(x) for x in r_mp)
    cert = {
        "m": m,
        "dps": dps,
        "sweeps": sweeps,
        "refine_gap": gap,
        "snaps": snaps,
        "terminal_box": {"w": [float(blo[W]), float(bhi[W])], "v": [float(blo[V]), float(bhi[V])]},
        "terminal_box_width": float(np.max(bhi - blo)),
        "terminal_box_v_width": float(bhi[V] - blo[V]),
        "max_depth": int(max(s["max_depth"] for s in steps)),
        "padding": {"lipschitz_matrix": M.tolist(), "round_pad": cfg.round_pad, "slack": cfg.slack, "res": cfg.res},
        "resolution_accepts": int(sum(s["resolution_accepts"] for s in steps)),
        "boxes_per_step": [int(s["n_boxes"]) for s in steps],
        "min_margin_w": float(delta2 - np.max(np.abs(coords[:, W]))),
        "min_margin_v": float(delta1 - np.max(np.abs(coords[:, V]))),
    }
    return ShadowResult(r, float(max(dists)), dists, cert, r_str)


def shadow_orbit(sys: SystemSpec, result: ShadowResult, upto: Optional[int] = None) -> np.ndarray:
    """The true orbit ``r, f(r), ..., f^n(r)`` of a solver result (``n = upto`` or ``m``).

    Iterated at the certificate precision."""
    m = int(result.certificate.get("m", 0))
    n = m if upto is None else int(upto)
    dps = int(result.certificate.get("dps", orbit_dps(sys, m)))
    with mpmath.workdps(dps):
        q = (mpmath.mpf(result.r_mp[0]), mpmath.mpf(result.r_mp[1]))
        out = [(float(q[0]), float(q[1]))]
        for _ in range(n):
            q = mp_forward(sys, q)
            out.append((float(q[0]), float(q[1])))
    return reduce_point(np.array(out))


# --- oracle and verification -----------------------------------------------------------

@dataclass
class BruteResult:
    point: tuple
    z: tuple
    feasible: bool
    worst_violation: float
    grid_spacing: float
    n_feasible: int


def brute_force_shadow(sys: SystemSpec, ptraj, delta1: float, delta2: float, grid_n: int = 256,
                       slack: float = SolverConfig.slack) -> BruteResult:
    """Exhaustive grid search over ``P(delta1, delta2, p_0)``.

    Grid nodes ``-delta + 2 delta i / grid_n`` for ``0 < i < grid_n`` (nested under
    doubling).  Feasible means every forward image lies in the slack-shrunk
    ``Int0 P``.  Returns the feasible node nearest the chart centre, or the
    node with the smallest worst violation.
    """
    pts = ptraj.points if isinstance(ptraj, Pseudotrajectory) else reduce_point(np.asarray(ptraj, dtype=float).reshape(-1, 2))
    m = len(pts) - 1
    if m > 8:
        raise ValueError("brute_force_shadow is limited to m <= 8")
    if not 2 <= grid_n <= 512:
        raise ValueError("grid_n must lie in [2, 512]")
    i = np.arange(1, grid_n)
    ws = -delta2 + 2 * delta2 * i / grid_n
    vs = -delta1 + 2 * delta1 * i / grid_n
    Wg, Vg = np.meshgrid(ws, vs, indexing="ij")
    Z = np.column_stack([Wg.ravel(), Vg.ravel()])
    q = chart_point(sys.frame, pts[0], Z)
    viol = np.full(len(Z), -np.inf)
    for k in range(m + 1):
        if k:
            q = eval_forward(sys, q)
        c = local_disp_many(sys.frame, pts[k], q)
        viol = np.maximum(viol, np.maximum(np.abs(c[:, W]) - (delta2 - slack), np.abs(c[:, V]) - (delta1 - slack)))
    feas = viol < 0
    if feas.any():
        idx = np.nonzero(feas)[0]
        j = idx[int(np.argmin(np.linalg.norm(Z[idx], axis=1)))]
    else:
        j = int(np.argmin(viol))
    return BruteResult(tuple(float(x) for x in q_point(sys, pts[0], Z[j])), tuple(float(x) for x in Z[j]),
                       bool(feas.any()), float(viol[j]), float(2 * max(delta1, delta2) / grid_n), int(feas.sum()))


def q_point(sys, p0, z):
    return chart_point(sys.frame, p0, np.asarray(z, dtype=float))


@dataclass
class VerifyResult:
    passed: bool
    worst_step: int
    worst_dist: float

    def __bool__(self):
        return self.passed


def verify_shadowing(sys: SystemSpec, ptraj, r, eps: float, dps: Optional[int] = None) -> VerifyResult:
    """Strict check ``dist(f^k(r), p_k) < eps`` for all ``k`` in multiprecision.

    ``r`` may be floats, mpf values or decimal strings (``ShadowResult.r_mp``).
    """
    pts = ptraj.points if isinstance(ptraj, Pseudotrajectory) else reduce_point(np.asarray(ptraj, dtype=float).reshape(-1, 2))
    m = len(pts) - 1
    dps = dps or orbit_dps(sys, m)
    with mpmath.workdps(dps):
        q = (mpmath.mpf(r[0]), mpmath.mpf(r[1]))
        P = _mp_points(pts)
        worst, worst_k = mpmath.mpf(-1), 0
        e = mpmath.mpf(eps)
        ok = True
        for k in range(m + 1):
            if k:
                q = mp_forward(sys, q)
            dx = q[0] - P[k][0]
            dy = q[1] - P[k][1]
            dx -= mpmath.nint(dx)
            dy -= mpmath.nint(dy)
            dist = mpmath.sqrt(dx * dx + dy * dy)
            if dist > worst:
                worst, worst_k = dist, k
            if not dist < e:
                ok = False
        return VerifyResult(ok, worst_k, _ceil_float(worst))
