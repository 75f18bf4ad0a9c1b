"""Lyapunov pair, rectangles, retractions and sampled condition checks.

All sets live in the eigenframe chart about a base point ``p``: a point ``q``
has chart coordinates ``(w, v)`` and ``V(q, p) = |v|``, ``W(q, p) = |w|``.
The rectangle ``P(a, b, p)`` is the square ``|v| <= a, |w| <= b``.

Every mapping condition is reduced to a scalar *slack* per sample which is
positive exactly when the sample is compatible with the condition; reports
carry the minimum slack.  All slacks are 1-Lipschitz in the image chart
coordinates, which is what makes the drift bound in ``estimate_d`` honest.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import qmc

from .errors import ChainFailed, ChartOverflow, EmptySample, NoPositiveD, OnCore, OutOfChart, OutOfRect
from .systems import SystemSpec, eval_forward, eval_inverse, lipschitz_matrix
from .torus import EigenFrame, chart_point, local_disp, local_disp_many, reduce_point, torus_dist

FACE_TOL = 1e-9
MAPPING_CONDITIONS = ("C5", "C6", "C7", "C8", "C9")


@dataclass(frozen=True)
class LyapPair:
    """The coordinate pair ``V = |v|``, ``W = |w|`` of an eigenframe."""

    frame: EigenFrame

    @property
    def chart_radius(self) -> float:
        return self.frame.chart_radius

    @property
    def delta1_default(self) -> float:
        """Default global smallness constant (Delta_1) for rectangle sizes."""
        return self.chart_radius / 4


def eval_V(pair: LyapPair, q, p) -> float:
    return abs(local_disp(pair.frame, p, q).v)


def eval_W(pair: LyapPair, q, p) -> float:
    return abs(local_disp(pair.frame, p, q).w)


# --- rectangles and faces ----------------------------------------------------------

class RegionClass(enum.Enum):
    OUTSIDE = "Outside"
    INT0 = "Int0"
    QFACE = "QFace"
    WFACE = "WFace"
    CORNER = "Corner"
    TCORE = "TCore"


@dataclass(frozen=True)
class RectSpec:
    """``P(a, b, center)``: ``a`` bounds V, ``b`` bounds W."""

    center: tuple
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"rectangle half-widths must be positive, got a={self.a}, b={self.b}")


def classify_chart(a: float, b: float, w: float, v: float, tol: float = FACE_TOL) -> RegionClass:
    """Classify chart coordinates ``(w, v)`` relative to ``P(a, b)``."""
    V, W = abs(v), abs(w)
    if V > a + tol or W > b + tol:
        return RegionClass.OUTSIDE
    on_q = abs(V - a) <= tol
    on_w = abs(W - b) <= tol
    if on_q and on_w:
        return RegionClass.CORNER
    if on_q:
        return RegionClass.QFACE
    if on_w:
        return RegionClass.WFACE
    if V <= tol:
        return RegionClass.TCORE
    return RegionClass.INT0


def classify_region(rect: RectSpec, pair: LyapPair, q, tol: float = FACE_TOL) -> RegionClass:
    if rect.a >= pair.chart_radius or rect.b >= pair.chart_radius:
        raise OutOfChart(f"rectangle ({rect.a}, {rect.b}) exceeds the chart radius {pair.chart_radius:.4g}")
    w, v = local_disp(pair.frame, rect.center, q)
    return classify_chart(rect.a, rect.b, w, v, tol)


def retraction_rho0(rect: RectSpec, q) -> tuple:
    """Vertical push-out ``(w, v) -> (w, a sign v)`` of ``P \\ T`` onto ``Q`` (chart coordinates)."""
    w, v = float(q[0]), float(q[1])
    if abs(v) > rect.a or abs(w) > rect.b:
        raise OutOfRect(f"({w}, {v}) is not in P({rect.a}, {rect.b})")
    if v == 0:
        raise OnCore("rho0 is undefined on the core V = 0")
    return (w, math.copysign(rect.a, v))


def retraction_sigma(p, delta1: float, delta2: float, Delta: float, q) -> tuple:
    """Clamp ``w`` to ``[-delta2, delta2]``: a retraction ``P(delta1, Delta) -> P(delta1, delta2)``
    preserving V.  ``p`` is the base point (chart coordinates are relative to it)."""
    if not delta2 < Delta:
        raise ValueError(f"need delta2 < Delta, got {delta2} >= {Delta}")
    w, v = float(q[0]), float(q[1])
    if abs(v) > delta1 or abs(w) > Delta:
        raise OutOfRect(f"({w}, {v}) is not in P({delta1}, {Delta})")
    return (min(max(w, -delta2), delta2), v)


# --- reports -------------------------------------------------------------------------

@dataclass
class ConditionReport:
    condition: str
    params: dict
    passed: bool
    min_margin: float
    witness: dict = field(default_factory=dict)
    n_base: int = 0
    n_samples: int = 0
    sample_spacing: float = 0.0
    lipschitz_est: float = 0.0
    details: dict = field(default_factory=dict)

    @property
    def resolution_bound(self) -> float:
        """Margin above which denser sampling should not flip the verdict."""
        return self.lipschitz_est * self.sample_spacing

    def to_dict(self) -> dict:
        d = asdict(self)
        d["resolution_bound"] = self.resolution_bound
        return _jsonable(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


# --- (C1) and (C2)-(C4) -----------------------------------------------------------

def check_C1(sys: SystemSpec, pair: LyapPair, eps: float, grid_n: int = 1000) -> ConditionReport:
    """Largest ``Delta_0`` on the grid ``eps (1 - 1/grid_n)^j`` with ``P(Delta_0, Delta_0, p)`` inside ``B(eps, p)``.

    The chart is a linear image of the square, so the farthest point of the
    square is a corner at distance ``Delta_0 * |E|_square`` for every ``p``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    ratio = 1.0 - 1.0 / grid_n
    frame = pair.frame
    reach = frame.square_norm
    cap = pair.chart_radius
    j = max(0, math.ceil(math.log(reach) / -math.log(ratio)) - 2)
    while True:
        d0 = eps * ratio ** j
        if d0 * reach < eps and d0 < cap:
            break
        j += 1
    corners = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float) * d0
    attained = float(np.max(np.linalg.norm(frame.from_chart(corners), axis=1)))
    margin = eps - attained
    return ConditionReport(
        "C1", {"eps": eps, "Delta0": d0}, margin > 0, margin,
        witness={"corner_chart": corners[int(np.argmax(np.linalg.norm(frame.from_chart(corners), axis=1)))].tolist()},
        n_base=1, n_samples=4, details={"Delta0": d0, "grid_ratio": ratio},
    )


def check_retraction_axioms(rect_params: dict, sample_n: int = 256, seed: int = 0) -> ConditionReport:
    """Sampled checks of rho0 (P \\ T -> Q) and sigma (P(d1, D) -> P(d1, d2)).

    ``rect_params``: ``delta1``, ``delta2``, ``Delta``.  Non-retractability of
    Q in P is recorded through its geometric witness: Q has two components at
    distance ``2 delta1`` while P is convex (sampled midpoints stay in P).
    """
    d1, d2, D = float(rect_params["delta1"]), float(rect_params["delta2"]), float(rect_params["Delta"])
    rng = np.random.default_rng(seed)
    rect = RectSpec((0.0, 0.0), d1, d2)
    idem_rho = fix_rho = idem_sig = fix_sig = 0.0
    ratio_min = math.inf
    cont_rho = 0.0
    for _ in range(sample_n):
        w = rng.uniform(-d2, d2)
        v = rng.uniform(-d1, d1)
        if v == 0:
            continue
        r1 = retraction_rho0(rect, (w, v))
        r2 = retraction_rho0(rect, r1)
        idem_rho = max(idem_rho, abs(r1[0] - r2[0]) + abs(r1[1] - r2[1]))
        q_face = (w, math.copysign(d1, v))
        rq = retraction_rho0(rect, q_face)
        fix_rho = max(fix_rho, abs(rq[0] - q_face[0]) + abs(rq[1] - q_face[1]))
        # local continuity modulus a / V
        h = 1e-3 * abs(v)
        rh = retraction_rho0(rect, (w, v + math.copysign(h, v) * 0.5))
        cont_rho = max(cont_rho, math.hypot(rh[0] - r1[0], rh[1] - r1[1]) / h - d1 / abs(v))

        ws = rng.uniform(-D, D)
        s1 = retraction_sigma(None, d1, d2, D, (ws, v))
        s2 = retraction_sigma(None, d1, d2, D, s1)
        idem_sig = max(idem_sig, abs(s1[0] - s2[0]) + abs(s1[1] - s2[1]))
        s_fix = retraction_sigma(None, d1, d2, D, (w, v))
        fix_sig = max(fix_sig, abs(s_fix[0] - w) + abs(s_fix[1] - v))
        ratio_min = min(ratio_min, abs(s1[1]) / abs(v))
    # convexity of P: midpoints of random pairs stay in P
    a = np.column_stack([rng.uniform(-d2, d2, sample_n), rng.uniform(-d1, d1, sample_n)])
    b = np.column_stack([rng.uniform(-d2, d2, sample_n), rng.uniform(-d1, d1, sample_n)])
    mid = 0.5 * (a + b)
    convex = bool(np.all(np.abs(mid[:, 0]) <= d2) and np.all(np.abs(mid[:, 1]) <= d1))
    separation = 2 * d1
    residual = max(idem_rho, fix_rho, idem_sig, fix_sig, max(cont_rho, 0.0))
    ok = residual == 0.0 and ratio_min >= 1.0 and convex
    margin = separation if ok else -max(residual, 1.0 - ratio_min, 0.0 if convex else 1.0)
    return ConditionReport(
        "C2-C4", {"delta1": d1, "delta2": d2, "Delta": D}, ok, margin,
        n_samples=sample_n,
        details={
            "rho0_idempotence_residual": idem_rho, "rho0_fix_residual": fix_rho,
            "rho0_continuity_excess": cont_rho,
            "sigma_idempotence_residual": idem_sig, "sigma_fix_residual": fix_sig,
            "sigma_V_ratio_min": ratio_min, "retract_factor": 1.0,
            "Q_face_separation": separation, "P_convex": convex,
            "C2": "analytic: Q has two components, P is connected",
        },
    )


# --- sampling ----------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Base points and per-set sample densities for the mapping checks.

    Base points: a uniform ``base_n x base_n`` torus grid, a ``support_n`` chart
    grid covering the perturbation support, a ``core_n`` chart grid of
    half-width ``2 Delta`` about the fixed point, and the fixed point itself.
    """

    base_n: int = 16
    support_n: int = 24
    core_n: int = 32
    face_n: int = 64
    interior_n: int = 256
    seed: int = 0

    def denser(self, factor: int = 4) -> "GridSpec":
        return GridSpec(self.base_n, self.support_n, self.core_n, self.face_n * factor,
                        self.interior_n * factor, self.seed)

    def to_dict(self) -> dict:
        return asdict(self)


def base_points(sys: SystemSpec, grid: GridSpec, Delta: float) -> np.ndarray:
    frame = sys.frame
    parts = []
    if grid.base_n > 0:
        t = np.arange(grid.base_n) / grid.base_n
        X, Y = np.meshgrid(t, t, indexing="ij")
        parts.append(np.column_stack([X.ravel(), Y.ravel()]))
    if sys.r > 0 and grid.support_n > 0:
        s = np.linspace(-(sys.r + 2 * Delta), sys.r + 2 * Delta, grid.support_n)
        W, V = np.meshgrid(s, s, indexing="ij")
        parts.append(chart_point(frame, [0.0, 0.0], np.column_stack([W.ravel(), V.ravel()])))
    if grid.core_n > 0:
        s = np.linspace(-2 * Delta, 2 * Delta, grid.core_n)
        W, V = np.meshgrid(s, s, indexing="ij")
        parts.append(chart_point(frame, [0.0, 0.0], np.column_stack([W.ravel(), V.ravel()])))
    parts.append(np.zeros((1, 2)))
    P = np.unique(np.round(np.concatenate(parts), 15), axis=0)
    if len(P) == 0:
        raise EmptySample("no base points")
    return P


def _halton(n: int, seed: int = 0) -> np.ndarray:
    if n <= 0:
        return np.zeros((0, 2))
    return qmc.Halton(d=2, scramble=False).random(n + 1)[1:]


def _box_samples(w_lo, w_hi, v_lo, v_hi, grid: GridSpec, interior=True) -> np.ndarray:
    n = grid.face_n
    if n < 2:
        raise EmptySample("face_n must be at least 2")
    ws = np.linspace(w_lo, w_hi, n)
    vs = np.linspace(v_lo, v_hi, n)
    faces = [
        np.column_stack([ws, np.full(n, v_lo)]), np.column_stack([ws, np.full(n, v_hi)]),
        np.column_stack([np.full(n, w_lo), vs]), np.column_stack([np.full(n, w_hi), vs]),
    ]
    if interior:
        h = _halton(grid.interior_n, grid.seed)
        faces.append(np.column_stack([w_lo + (w_hi - w_lo) * h[:, 0], v_lo + (v_hi - v_lo) * h[:, 1]]))
    return np.concatenate(faces)


def rect_samples(a: float, b: float, grid: GridSpec) -> np.ndarray:
    """Faces, corners and low-discrepancy interior of ``P(a, b)`` as chart ``(w, v)``."""
    return _box_samples(-b, b, -a, a, grid)


def core_samples(b: float, grid: GridSpec) -> np.ndarray:
    """``T(., b)``: the segment ``v = 0, |w| <= b``."""
    ws = np.linspace(-b, b, 2 * grid.face_n + 1)
    return np.column_stack([ws, np.zeros_like(ws)])


def q_samples(a: float, b: float, grid: GridSpec) -> np.ndarray:
    """``Q(a, b)``: the two faces ``|v| = a``."""
    ws = np.linspace(-b, b, 2 * grid.face_n + 1)
    return np.concatenate([np.column_stack([ws, np.full_like(ws, a)]), np.column_stack([ws, np.full_like(ws, -a)])])


def s_samples(delta1: float, Delta: float, grid: GridSpec) -> np.ndarray:
    """``S(delta1, Delta)``: the two bands ``delta1 <= |v| <= Delta``, ``|w| <= Delta``."""
    return np.concatenate([
        _box_samples(-Delta, Delta, delta1, Delta, grid),
        _box_samples(-Delta, Delta, -Delta, -delta1, grid),
    ])


def _spacing(Z: np.ndarray) -> float:
    """Largest nearest-neighbour gap in a sample set (coarse upper estimate)."""
    if len(Z) < 2:
        return 0.0
    ext = np.ptp(Z, axis=0)
    area = float(np.prod(np.where(ext > 0, ext, 1.0)))
    per_face = np.max(ext) / max(1, len(Z) ** 0.5)
    return float(max(per_face, math.sqrt(area / len(Z))))


def chart_images(sys: SystemSpec, P: np.ndarray, Z: np.ndarray, inverse: bool = False, chunk: int = 400_000) -> np.ndarray:
    """Chart coordinates of ``f(p + E z)`` relative to ``f(p)`` (or with ``f^-1``); shape ``(N, S, 2)``."""
    step = eval_inverse if inverse else eval_forward
    frame = sys.frame
    N, S = len(P), len(Z)
    out = np.empty((N, S, 2))
    fP = step(sys, P)
    rows = max(1, chunk // max(S, 1))
    for i in range(0, N, rows):
        Pi = P[i:i + rows]
        Q = chart_point(frame, Pi[:, None, :], Z[None, :, :])
        F = step(sys, Q.reshape(-1, 2)).reshape(len(Pi), S, 2)
        out[i:i + rows] = local_disp_many(frame, fP[i:i + rows, None, :], F)
    return out


# --- slack functions (positive = compatible) ------------------------------------

def _slack(cond: str, C: np.ndarray, d1: float, d2: float, D: float) -> np.ndarray:
    w = np.abs(C[..., 0])
    v = np.abs(C[..., 1])
    if cond == "C5":
        return np.minimum(D - v, D - w)
    if cond in ("C6", "W6"):
        return np.minimum(d1 - v, d2 - w)
    if cond == "C7":
        return np.maximum(np.abs(v - d1), w - d2)
    if cond in ("C8", "W4"):
        # outside the V-window of P', or strictly inside in W
        return np.maximum(v - d1, d2 - w)
    if cond in ("C9", "W5"):
        return np.maximum(v - d1, w - d2)
    raise ValueError(f"unknown condition {cond!r}")


def _validate_params(pair: LyapPair, d1, d2, D, Delta1=None):
    if not (d1 > 0 and d2 > 0):
        raise ValueError(f"delta1 and delta2 must be positive, got {d1}, {d2}")
    if not (d1 < D and d2 < D):
        raise ValueError(f"need delta1, delta2 < Delta, got {d1}, {d2}, {D}")
    Delta1 = pair.delta1_default if Delta1 is None else Delta1
    if not D < Delta1:
        raise ChartOverflow(f"Delta = {D} is not below Delta_1 = {Delta1:.4g}")


def _lip_inf(M: np.ndarray) -> float:
    return float(np.max(np.sum(np.abs(M), axis=1)))


def _witness(P, Z, C, slack):
    i, j = np.unravel_index(int(np.argmin(slack)), slack.shape)
    return {"p": P[i].tolist(), "q_chart": Z[j].tolist(), "image_chart": C[i, j].tolist()}


def check_mapping_condition(sys: SystemSpec, pair: LyapPair, cond: str, delta1: float, delta2: float,
                            Delta: float, grid: Optional[GridSpec] = None, Delta1: Optional[float] = None,
                            _cache: Optional[dict] = None) -> ConditionReport:
    """Sampled margin of one of C5..C9 at ``(delta1, delta2, Delta)``.

    C8 is checked in the robust form "no image point of P lies in P' with
    ``W = delta2``": every image sample must satisfy ``V > delta1`` or
    ``W < delta2`` relative to ``f(p)``.  This implies the face inclusion and
    gives a margin that does not depend on samples landing exactly on faces.
    """
    if cond not in MAPPING_CONDITIONS:
        raise ValueError(f"unknown condition {cond!r}")
    grid = grid or GridSpec()
    d1, d2, D = float(delta1), float(delta2), float(Delta)
    _validate_params(pair, d1, d2, D, Delta1)
    M = lipschitz_matrix(sys)
    if D * max(_lip_inf(M), 1.0) * sys.frame.square_norm >= pair.chart_radius:
        raise ChartOverflow(f"images of P({D}, {D}) leave the chart")
    P = base_points(sys, grid, D)
    if cond == "C5":
        Z = rect_samples(d1, d2, grid)
        C = _images(sys, P, Z, False, _cache)
        s = _slack("C5", C, d1, d2, D)
        Ci = _images(sys, P, Z, True, _cache)
        si = _slack("C5", Ci, d1, d2, D)
        fwd_m, inv_m = float(s.min()), float(si.min())
        if inv_m < fwd_m:
            C, s = Ci, si
        details = {"forward_margin": fwd_m, "inverse_margin": inv_m}
    else:
        if cond == "C6":
            Z = core_samples(d2, grid)
        elif cond == "C7":
            Z = core_samples(D, grid)
        elif cond == "C8":
            Z = rect_samples(d1, d2, grid)
        else:
            Z = s_samples(d1, D, grid)
        C = _images(sys, P, Z, False, _cache)
        s = _slack(cond, C, d1, d2, D)
        details = {}
    margin = float(s.min())
    return ConditionReport(
        cond, {"delta1": d1, "delta2": d2, "Delta": D}, margin > 0, margin,
        witness=_witness(P, Z, C, s), n_base=len(P), n_samples=len(Z),
        sample_spacing=_spacing(Z), lipschitz_est=_lip_inf(M), details=details,
    )


def _images(sys, P, Z, inverse, cache):
    if cache is None:
        return chart_images(sys, P, Z, inverse)
    key = (inverse, P.shape, Z.shape, P.tobytes().__hash__(), Z.tobytes().__hash__())
    if key not in cache:
        cache[key] = chart_images(sys, P, Z, inverse)
    return cache[key]


def check_conditions(sys: SystemSpec, pair: LyapPair, delta1: float, delta2: float, Delta: float,
                     grid: Optional[GridSpec] = None, Delta1: Optional[float] = None) -> list:
    """Reports for C5..C9 sharing image computations."""
    cache = {}
    return [check_mapping_condition(sys, pair, c, delta1, delta2, Delta, grid, Delta1, cache)
            for c in MAPPING_CONDITIONS]


# --- the pairwise condition and d(delta) -------------------------------------------

def check_wazewski_pair(sys: SystemSpec, pair: LyapPair, p, p_next, delta1: float, delta2: float,
                        grid: Optional[GridSpec] = None) -> ConditionReport:
    """Margins of the pairwise condition for ``P = P(d1, d2, p)``, ``P' = P(d1, d2, p_next)``.

    (4) ``f(P) cap dP' in Q'`` is checked in the same robust form as C8 and
    (5) ``f(Q) cap P' = empty`` directly.  For the retraction clause (Q a
    retract of ``H = (P \\ f^-1(Int0 P')) cup f^-1(Q')``) we check the core
    inclusion ``f(T(d1, d2, p)) in Int0 P'``: it keeps H off the core, so the
    vertical push-out rho0 restricted to H retracts it onto Q (Q lies in H by (5)).
    """
    grid = grid or GridSpec()
    d1, d2 = float(delta1), float(delta2)
    frame = pair.frame
    p = reduce_point(p)
    p_next = reduce_point(p_next)
    M = lipschitz_matrix(sys)
    reach = torus_dist(eval_forward(sys, p), p_next) + max(d1, d2) * _lip_inf(M) * frame.square_norm
    if reach >= pair.chart_radius or max(d1, d2) >= pair.chart_radius:
        raise OutOfChart(f"rectangles about {p.tolist()} and {p_next.tolist()} do not fit in one chart")
    sets = {"(4)": ("W4", rect_samples(d1, d2, grid)), "(5)": ("W5", q_samples(d1, d2, grid)),
            "core": ("W6", core_samples(d2, grid))}
    margins, wit = {}, None
    for name, (kind, Z) in sets.items():
        C = local_disp_many(frame, p_next, eval_forward(sys, chart_point(frame, p, Z)))
        s = _slack(kind, C, d1, d2, 0.0)
        j = int(np.argmin(s))
        margins[name] = float(s[j])
        if wit is None or margins[name] < wit[0]:
            wit = (margins[name], {"set": name, "q_chart": Z[j].tolist(), "image_chart": C[j].tolist()})
    witness = dict(wit[1], p=p.tolist(), p_next=p_next.tolist())
    margin = min(margins.values())
    Zs = [z for _, z in sets.values()]
    return ConditionReport(
        "W-pair", {"delta1": d1, "delta2": d2}, margin > 0, margin, witness=witness,
        n_base=1, n_samples=sum(len(z) for z in Zs), sample_spacing=max(_spacing(z) for z in Zs),
        lipschitz_est=_lip_inf(M),
        details={"margin_4": margins["(4)"], "margin_5": margins["(5)"], "margin_core": margins["core"],
                 "retract_clause": "rho0 on H, valid when margin_5 and margin_core are positive"},
    )


def drift_directions(frame: EigenFrame, n_random: int = 8, seed: int = 0) -> np.ndarray:
    """Unit drift directions in standard coordinates: eigen-axes, diagonals, random."""
    uc, ue = frame.u_contract, frame.u_expand
    dirs = [uc, -uc, ue, -ue]
    for s1 in (1, -1):
        for s2 in (1, -1):
            v = s1 * uc + s2 * ue
            dirs.append(v / np.linalg.norm(v))
    th = np.random.default_rng(seed).uniform(0, 2 * np.pi, n_random)
    dirs.extend(np.column_stack([np.cos(th), np.sin(th)]))
    return np.array(dirs)


@dataclass
class DEstimate:
    d: float
    d_bisect: float
    d_lipschitz: float
    zero_drift_margin: float
    n_directions: int
    n_base: int

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


D_SAFETY = 0.5


def _pair_margin(CP, CQ, CT, drift_chart, d1, d2) -> float:
    s4 = _slack("W4", CP - drift_chart, d1, d2, 0.0).min()
    s5 = _slack("W5", CQ - drift_chart, d1, d2, 0.0).min()
    s6 = _slack("W6", CT - drift_chart, d1, d2, 0.0).min()
    return float(min(s4, s5, s6))


def estimate_d(sys: SystemSpec, pair: LyapPair, delta1: float, delta2: float, Delta: float,
               grid: Optional[GridSpec] = None, n_random: int = 8, return_details: bool = False):
    """Drift ``d`` such that the pairwise condition holds whenever ``dist(p', f(p)) < d``.

    Images of P-, Q- and core samples are computed once relative to ``f(p)``; a drift
    ``e`` shifts chart coordinates by ``E^-1 e``.  Every slack is 1-Lipschitz in
    the chart coordinates, so ``d_lip = m0 / |E^-1|_(2->inf)`` is valid on the
    samples for every direction.  A bisection over the extremal directions
    gives ``d_bisect``; the result is ``max(d_lip, 0.5 d_bisect)``, falling back to
    ``d_lip`` if the larger value fails a recheck at ``d`` and ``d/2``.
    """
    grid = grid or GridSpec()
    d1, d2, D = float(delta1), float(delta2), float(Delta)
    _validate_params(pair, d1, d2, D)
    frame = pair.frame
    P = base_points(sys, grid, D)
    ZP = rect_samples(d1, d2, grid)
    ZQ = q_samples(d1, d2, grid)
    CP = chart_images(sys, P, ZP)
    CQ = chart_images(sys, P, ZQ)
    CT = chart_images(sys, P, core_samples(d2, grid))
    m0 = _pair_margin(CP, CQ, CT, 0.0, d1, d2)
    if not m0 > 0:
        raise NoPositiveD(f"zero-drift pairwise margin {m0:.3e} is not positive at delta=({d1}, {d2})")
    Einv = frame.chart_inv
    d_lip = m0 / float(np.max(np.linalg.norm(Einv, axis=1))) * (1 - 1e-9)
    dirs_chart = drift_directions(frame, n_random, grid.seed) @ Einv.T

    def ok(d):
        return all(_pair_margin(CP, CQ, CT, d * (1 - 1e-6) * e, d1, d2) > 0 for e in dirs_chart)

    lo, hi = d_lip, D
    if ok(hi):
        lo = hi
    else:
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if ok(mid):
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-6 * hi:
                break
    d_b = lo
    d = max(d_lip, D_SAFETY * d_b)
    if d > d_lip and not (ok(d) and ok(0.5 * d)):
        d = d_lip
    est = DEstimate(d, d_b, d_lip, m0, len(dirs_chart), len(P))
    return est if return_details else d


# --- the parameter chain ----------------------------------------------------------

@dataclass
class ParameterChain:
    eps: float
    Delta0: float
    Delta: float
    delta1: float
    delta2: float
    d: float
    reports: list = field(default_factory=list)
    d_details: Optional[DEstimate] = None

    def to_dict(self) -> dict:
        return _jsonable({
            "eps": self.eps, "Delta0": self.Delta0, "Delta": self.Delta,
            "delta1": self.delta1, "delta2": self.delta2, "d": self.d,
            "reports": [r.to_dict() for r in self.reports],
            "d_details": self.d_details.to_dict() if self.d_details else None,
        })


CHAIN_TOL = 1e-9


def derive_parameter_chain(sys: SystemSpec, pair: LyapPair, eps: float, grid: Optional[GridSpec] = None,
                           n_levels: int = 12, n_candidates: int = 3, Delta1: Optional[float] = None) -> ParameterChain:
    """``eps -> (Delta0, Delta, delta1, delta2, d)`` with every condition report attached.

    ``Delta = Delta0 / 2`` (capped below ``Delta_1``).  Candidate deltas form the
    grid ``Delta 2^(-j/2)``; balanced pairs ``delta1 = delta2`` are tried first and
    unbalanced pairs only if none passes.  Among the largest passing candidates
    the one with the largest ``d`` wins.
    """
    if not eps > 2 * CHAIN_TOL:
        raise ChainFailed(f"eps = {eps} is below the resolution 2 * {CHAIN_TOL}", condition="C1")
    grid = grid or GridSpec()
    Delta1 = pair.delta1_default if Delta1 is None else Delta1
    c1 = check_C1(sys, pair, eps)
    if not c1.passed:
        raise ChainFailed("no Delta0 found", condition="C1", reports=[c1])
    D0 = c1.details["Delta0"]
    D = min(0.5 * D0, Delta1 * (1 - 1e-9))
    levels = [D * 2 ** (-j / 2) for j in range(1, n_levels + 1)]
    axioms = check_retraction_axioms({"delta1": levels[0], "delta2": levels[0], "Delta": D}, 64, grid.seed)

    passing = []
    worst = None

    def try_pair(a, b):
        nonlocal worst
        reps = check_conditions(sys, pair, a, b, D, grid, Delta1)
        bad = [r for r in reps if not r.passed]
        if bad:
            r = min(bad, key=lambda r: r.min_margin)
            if worst is None or r.min_margin > worst.min_margin:
                worst = r
            return None
        return reps

    for dl in levels:
        reps = try_pair(dl, dl)
        if reps is not None:
            passing.append((dl, dl, reps))
            if len(passing) >= n_candidates:
                break
    if not passing:
        for a in levels:
            for b in levels:
                if a == b:
                    continue
                reps = try_pair(a, b)
                if reps is not None:
                    passing.append((a, b, reps))
            if len(passing) >= n_candidates:
                break
    if not passing:
        cond = worst.condition if worst else "C5"
        raise ChainFailed(f"no (delta1, delta2) below Delta = {D:.4g} passes C5-C9 (closest failure: {cond})",
                          condition=cond, reports=[c1] + ([worst] if worst else []))
    best = None
    for a, b, reps in passing[:n_candidates]:
        try:
            est = estimate_d(sys, pair, a, b, D, grid, return_details=True)
        except NoPositiveD:
            continue
        if best is None or est.d > best[3].d:
            best = (a, b, reps, est)
    if best is None:
        raise ChainFailed("conditions pass but no positive d was found", condition="W-pair",
                          reports=[c1] + passing[0][2])
    a, b, reps, est = best
    return ParameterChain(eps, D0, D, a, b, est.d, [c1, axioms] + reps, est)
