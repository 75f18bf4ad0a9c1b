"""Torus homeomorphisms: the hyperbolic automorphism and its local perturbations.

All perturbations are written in eigenframe coordinates ``(x, y)`` about the
fixed point at the origin (``x`` contracting, ``y`` expanding) and are the
identity modification of ``A`` outside the square ``|x|, |y| < r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional

import mpmath
import numpy as np
from scipy import integrate

from ._arith import MP, NP
from .errors import (
    InvalidProfile,
    NonConvergence,
    NotDifferentiable,
    NotInvertible,
    SupportTooLarge,
)
from .torus import DEFAULT_MATRIX, EigenFrame, reduce_point

LINEAR = "Linear"
LEWOWICZ = "LewowiczSmooth"
PIECEWISE = "PiecewiseHomeo"
PERTURBED = "Perturbed"
VARIANTS = (LINEAR, LEWOWICZ, PIECEWISE, PERTURBED)

# q(t) = 30t^2 - 80t^3 + 75t^4 - 24t^5: q(0)=q'(0)=0, q(1)=1, q'(1)=q''(1)=0, int_0^1 q = 1
RAMP = (Fraction(0), Fraction(0), Fraction(30), Fraction(-80), Fraction(75), Fraction(-24))
RAMP_INT = tuple([Fraction(0)] + [c / (i + 1) for i, c in enumerate(RAMP)])


def _poly(coeffs, t):
    acc = 0
    for c in reversed(coeffs):
        acc = acc * t + c
    return acc


def _coeffs(ops, cs):
    if ops is MP:
        return [mpmath.mpf(c.numerator) / c.denominator for c in cs]
    return [float(c) for c in cs]


# --- profiles ----------------------------------------------------------------

def _mp_alpha_beta(matrix_A):
    from .torus import _mp_frame

    a, b, _, _ = _mp_frame(matrix_A, mpmath.mp.dps)
    return a, b


@dataclass(frozen=True)
class LewowiczProfile:
    """Smooth bump data: the ramp ``h`` and the cutoff ``mu`` (a power of ``1 - (y/r)^2``)."""

    r: float
    alpha: float
    mu_power: int = 3
    matrix_A: tuple = DEFAULT_MATRIX

    def _c(self, ops):
        if ops is MP:
            return 1 - _mp_alpha_beta(self.matrix_A)[0], mpmath.mpf(self.r)
        return 1 - self.alpha, self.r

    def q(self, t, ops=NP):
        return _poly(_coeffs(ops, RAMP), t)

    def h(self, s, ops=NP):
        c, r = self._c(ops)
        return c * self.q(ops.minimum(ops.abs(s) / r, 1), ops)

    def lam(self, x, ops=NP):
        """lambda(x) = int_0^x ((1 - alpha) - h(s)) ds in closed form."""
        c, r = self._c(ops)
        t = ops.minimum(ops.abs(x) / r, 1)
        big = t - _poly(_coeffs(ops, RAMP_INT), t)
        return ops.sign(x) * c * r * big

    def dlam(self, x, ops=NP):
        c, r = self._c(ops)
        t = ops.minimum(ops.abs(x) / r, 1)
        return c * (1 - self.q(t, ops))

    def mu(self, y, ops=NP):
        r = ops.asreal(self.r)
        u = ops.minimum(ops.abs(y) / r, 1)
        return (1 - u * u) ** self.mu_power

    def dmu(self, y, ops=NP):
        r = ops.asreal(self.r)
        u = ops.minimum(ops.abs(y) / r, 1)
        k = self.mu_power
        return -2 * k * u * (1 - u * u) ** (k - 1) * ops.sign(y) / r

    # analytic bounds
    @property
    def q_max(self) -> float:
        crit = [t.real for t in np.roots([-120, 300, -240, 60, 0]) if abs(t.imag) < 1e-12 and 0 <= t.real <= 1]
        return float(max(float(self.q(t)) for t in crit + [0.0, 1.0]))

    @property
    def lam_sup(self) -> float:
        # critical points of t - Q(t) are the roots of q(t) = 1
        shifted = (RAMP[0] - 1,) + RAMP[1:]
        roots = np.roots([float(c) for c in reversed(shifted)])
        crit = [t.real for t in roots if abs(t.imag) < 1e-9 and 0 <= t.real <= 1]
        vals = [abs(float(self.lam(t * self.r))) for t in crit + [0.0, 1.0]]
        return max(vals) * (1 + 1e-12)

    @property
    def dmu_sup(self) -> float:
        k = self.mu_power
        u = 1.0 / math.sqrt(2 * k - 1)
        return 2 * k * u * (1 - u * u) ** (k - 1) / self.r * (1 + 1e-12)

    def validate(self) -> None:
        a, r = self.alpha, self.r
        if not isinstance(self.mu_power, int) or self.mu_power < 1:
            raise InvalidProfile(f"mu_power must be a positive integer, got {self.mu_power!r}")
        if abs(float(self.h(0.0))) > 0:
            raise InvalidProfile("h(0) = 0 fails")
        if (1 - a) * self.q_max >= 1:
            raise InvalidProfile("0 <= h < 1 fails: ramp overshoot too large for this alpha")
        s = np.linspace(-2 * r, 2 * r, 4001)
        hs = self.h(s)
        if np.any(hs < 0) or np.any(hs >= 1):
            raise InvalidProfile("0 <= h < 1 fails on samples")
        if abs(float(self.h(r)) - (1 - a)) > 1e-12:
            raise InvalidProfile("h(r) = 1 - alpha fails")
        resid, _ = integrate.quad(lambda t: (1 - a) - float(self.h(t)), 0.0, r, epsabs=1e-14, epsrel=1e-13)
        if abs(resid) > 1e-10:
            raise InvalidProfile(f"int_0^r ((1-alpha) - h) = {resid:.3e} != 0")
        if abs(float(self.mu(0.0)) - 1) > 0:
            raise InvalidProfile("mu(0) = 1 fails")
        y = np.linspace(0, 2 * r, 4001)
        m = self.mu(y)
        if np.any(np.diff(m) > 0):
            raise InvalidProfile("mu nonincreasing on y >= 0 fails")
        if np.any(np.abs(self.mu(-y) - m) > 0):
            raise InvalidProfile("mu even fails")
        if np.any(m[y >= r] != 0):
            raise InvalidProfile("mu(y) = 0 for |y| >= r fails")

    def to_dict(self) -> dict:
        return {"mu_power": self.mu_power, "h_ramp": "quintic"}


class PiecewiseLinear:
    """Increasing piecewise-linear map with knots ``xs -> ys`` and fixed slopes outside.

    Works with floats or mpf knots; evaluation follows the knot type.
    """

    def __init__(self, xs, ys, slope_left, slope_right):
        self.xs = tuple(xs)
        self.ys = tuple(ys)
        inner = [(self.ys[i + 1] - self.ys[i]) / (self.xs[i + 1] - self.xs[i]) for i in range(len(self.xs) - 1)]
        self.slopes = [slope_left] + inner + [slope_right]

    def __call__(self, x, ops=NP):
        xs, sl = self.xs, self.slopes
        out = self.ys[0] + sl[0] * (x - xs[0])
        for i, xi in enumerate(xs):
            out = out + (sl[i + 1] - sl[i]) * ops.maximum(x - xi, 0 * x)
        return out

    def inverse(self) -> "PiecewiseLinear":
        return PiecewiseLinear(self.ys, self.xs, 1 / self.slopes[0], 1 / self.slopes[-1])


def _cutoff(s, r, core, ops):
    """Piecewise-linear plateau: 1 on |s| <= core, 0 on |s| >= r."""
    return ops.minimum(ops.maximum((r - ops.abs(s)) / (r - core), 0 * s), 0 * s + 1)


@dataclass(frozen=True)
class PiecewiseProfile:
    """Knot data for the piecewise-linear pair (mu1, mu2) of the homeomorphism example.

    mu1, mu2 differ from ``alpha x``, ``beta y`` only on ``[-core, core]``.  On the
    torus the product map is blended back to ``A`` by piecewise-linear cutoffs
    that vanish at ``|x|, |y| = r``:

        y1 = beta y + chi(x) (mu2(y) - beta y)
        x1 = alpha x + chi(y1 / beta) (mu1(x) - alpha x)

    Each section is a convex combination of increasing maps, and the triangular
    form makes the whole map a homeomorphism.
    """

    r: float
    alpha: float
    beta: float
    lip_lambda: float
    core: float
    mu1_knots: tuple
    mu2_knots: tuple
    matrix_A: tuple = DEFAULT_MATRIX

    @property
    def mu1(self) -> PiecewiseLinear:
        return PiecewiseLinear(*self.mu1_knots, self.alpha, self.alpha)

    @property
    def mu2(self) -> PiecewiseLinear:
        return PiecewiseLinear(*self.mu2_knots, self.beta, self.beta)

    def _knots(self, ops):
        if ops is not MP:
            return self.alpha, self.beta, self.mu1_knots, self.mu2_knots
        a, b = _mp_alpha_beta(self.matrix_A)
        out = []
        for (xs, ys), rate in ((self.mu1_knots, a), (self.mu2_knots, b)):
            X = [mpmath.mpf(v) for v in xs]
            Y = [mpmath.mpf(v) for v in ys]
            # outer knots sit exactly on the linear map
            Y[0], Y[-1] = rate * X[0], rate * X[-1]
            out.append((X, Y))
        return a, b, out[0], out[1]

    def forward(self, x, y, ops=NP):
        a, b, (x1s, y1s), (x2s, y2s) = self._knots(ops)
        r, core = ops.asreal(self.r), ops.asreal(self.core)
        m1 = PiecewiseLinear(x1s, y1s, a, a)
        m2 = PiecewiseLinear(x2s, y2s, b, b)
        y1 = b * y + _cutoff(x, r, core, ops) * (m2(y, ops) - b * y)
        c = _cutoff(y1 / b, r, core, ops)
        x1 = a * x + c * (m1(x, ops) - a * x)
        return x1, y1

    def inverse(self, x1, y1, ops=NP):
        a, b, (x1s, y1s), (x2s, y2s) = self._knots(ops)
        r, core = ops.asreal(self.r), ops.asreal(self.core)
        c = _cutoff(y1 / b, r, core, ops)
        vals = [(1 - c) * a * xk + c * yk for xk, yk in zip(x1s, y1s)]
        x = PiecewiseLinear(vals, x1s, 1 / a, 1 / a)(x1, ops)
        chi = _cutoff(x, r, core, ops)
        vals = [(1 - chi) * b * xk + chi * yk for xk, yk in zip(x2s, y2s)]
        y = PiecewiseLinear(vals, x2s, 1 / b, 1 / b)(y1, ops)
        return x, y

    def lipschitz_matrix(self) -> np.ndarray:
        (xs1, ys1), (xs2, ys2) = self.mu1_knots, self.mu2_knots
        d1 = float(np.max(np.abs(np.asarray(ys1) - self.alpha * np.asarray(xs1))))
        d2 = float(np.max(np.abs(np.asarray(ys2) - self.beta * np.asarray(xs2))))
        ramp = self.r - self.core
        s1 = max(self.mu1.slopes)
        s2 = max(self.mu2.slopes)
        m_vw = d2 / ramp
        m_ww = s1 + d1 * m_vw / (self.beta * ramp)
        m_wv = d1 * s2 / (self.beta * ramp)
        return np.array([[m_ww, m_wv], [m_vw, s2]]) * (1 + 1e-12)

    @classmethod
    def default(cls, r, alpha, beta, lip_lambda=0.5, inner_frac=0.25, core_frac=0.5, matrix_A=DEFAULT_MATRIX):
        if not 0 < lip_lambda < 1:
            raise InvalidProfile(f"lip_lambda must lie in (0, 1), got {lip_lambda}")
        if lip_lambda < alpha:
            raise InvalidProfile(
                f"lip_lambda = {lip_lambda} < alpha = {alpha:.6f}: mu1 rises by 2*alpha*core over [-core, core], "
                "so some slope is at least alpha"
            )
        if not 0 < core_frac < 1 or not 0 < inner_frac < 1:
            raise InvalidProfile("core_frac and inner_frac must lie in (0, 1)")
        core = core_frac * r
        bk = inner_frac * core
        k1 = ((-core, -bk, bk, core), (-alpha * core, -lip_lambda * bk, lip_lambda * bk, alpha * core))
        k2 = ((-core, -bk, bk, core), (-beta * core, -bk / lip_lambda, bk / lip_lambda, beta * core))
        return cls(r, alpha, beta, lip_lambda, core, k1, k2, matrix_A)

    def validate(self) -> None:
        lam, core = self.lip_lambda, self.core
        if not 0 < lam < 1:
            raise InvalidProfile(f"lip_lambda must lie in (0, 1), got {lam}")
        if lam < self.alpha:
            raise InvalidProfile(f"lip_lambda = {lam} < alpha: mean slope of mu1 over [-core, core] is alpha")
        if not 0 < core < self.r:
            raise InvalidProfile(f"core {core} must lie in (0, r)")
        for name, (xs, ys), target in (("mu1", self.mu1_knots, self.alpha), ("mu2", self.mu2_knots, self.beta)):
            if abs(xs[0] + core) > 1e-15 or abs(xs[-1] - core) > 1e-15:
                raise InvalidProfile(f"{name} knots must start at -core and end at core")
            if abs(ys[0] + target * core) > 1e-12 or abs(ys[-1] - target * core) > 1e-12:
                raise InvalidProfile(f"{name} must match the linear map outside [-core, core]")
            if np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
                raise InvalidProfile(f"{name} must be strictly increasing")
        tol = 1e-12
        if max(self.mu1.slopes) > lam + tol:
            raise InvalidProfile(f"|mu1(x+nu) - mu1(x)| <= lip_lambda |nu| fails (max slope {max(self.mu1.slopes):.6g})")
        if min(self.mu2.slopes) < 1 / lam - tol:
            raise InvalidProfile(f"|mu2(y+nu) - mu2(y)| >= |nu| / lip_lambda fails (min slope {min(self.mu2.slopes):.6g})")

    def to_dict(self) -> dict:
        return {
            "lip_lambda": self.lip_lambda,
            "core": self.core,
            "mu1_knots": [list(self.mu1_knots[0]), list(self.mu1_knots[1])],
            "mu2_knots": [list(self.mu2_knots[0]), list(self.mu2_knots[1])],
        }


@dataclass(frozen=True)
class DisplacementField:
    """phi(p) = sup_norm * psi(p) * u, with psi a trigonometric polynomial of sup norm <= 1.

    ``u`` is the unit vector at ``angle`` from the contracting eigendirection.
    """

    sup_norm: float
    angle: float
    wavevectors: tuple  # ((k1, k2), ...)
    coeffs: tuple       # sum |c| = 1
    phases: tuple

    def direction(self, frame: EigenFrame) -> np.ndarray:
        d = frame.from_chart([math.cos(self.angle), math.sin(self.angle)])
        return d / np.linalg.norm(d)

    def lipschitz(self) -> float:
        """Lipschitz constant of phi in the flat metric."""
        return self.sup_norm * 2 * math.pi * sum(abs(c) * math.hypot(*k) for c, k in zip(self.coeffs, self.wavevectors))

    def grad_bounds(self, frame: EigenFrame) -> np.ndarray:
        """Bounds on |d psi/dw|, |d psi/dv| in eigen coordinates."""
        out = np.zeros(2)
        for c, k in zip(self.coeffs, self.wavevectors):
            kk = np.asarray(k, dtype=float)
            out += 2 * math.pi * abs(c) * np.abs(kk @ frame.chart)
        return out

    def psi(self, X, Y, ops=NP):
        two_pi = 2 * ops.pi
        acc = 0 * X
        for c, (k1, k2), ph in zip(self.coeffs, self.wavevectors, self.phases):
            acc = acc + ops.asreal(c) * ops.cos(two_pi * (k1 * X + k2 * Y) + ops.asreal(ph))
        return acc

    def to_dict(self) -> dict:
        return {
            "sup_norm": self.sup_norm,
            "angle": self.angle,
            "wavevectors": [list(k) for k in self.wavevectors],
            "coeffs": list(self.coeffs),
            "phases": list(self.phases),
        }


# --- the system ----------------------------------------------------------------

@dataclass(frozen=True)
class SystemSpec:
    variant: str
    frame: EigenFrame
    r: float = 0.0
    profile: object = None
    base: Optional["SystemSpec"] = None
    field: Optional[DisplacementField] = None
    seed: Optional[int] = None

    @property
    def alpha(self) -> float:
        return self.frame.eig_contract

    @property
    def beta(self) -> float:
        return self.frame.eig_expand

    @property
    def differentiable(self) -> bool:
        if self.variant == PERTURBED:
            return self.base.differentiable
        return self.variant in (LINEAR, LEWOWICZ)

    def to_dict(self) -> dict:
        d = {"variant": self.variant, "matrix_A": [list(r) for r in self.frame.matrix_A], "r": self.r}
        if self.profile is not None:
            d["profile"] = self.profile.to_dict()
        if self.base is not None:
            d["base"] = self.base.to_dict()
        if self.field is not None:
            d["field"] = self.field.to_dict()
        if self.seed is not None:
            d["seed"] = self.seed
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SystemSpec":
        variant = d["variant"]
        A = tuple(tuple(r) for r in d.get("matrix_A", DEFAULT_MATRIX))
        if variant == PERTURBED:
            base = cls.from_dict(d["base"])
            f = d["field"]
            fld = DisplacementField(
                float(f["sup_norm"]), float(f.get("angle", 0.0)),
                tuple(tuple(int(x) for x in k) for k in f["wavevectors"]),
                tuple(float(c) for c in f["coeffs"]), tuple(float(p) for p in f["phases"]),
            )
            return _perturbed_from_field(base, fld, d.get("seed"))
        return make_cat_system(variant, d.get("r", 0.0), d.get("profile") or {}, matrix=A)


def _check_support(frame: EigenFrame, r: float) -> None:
    if r * frame.square_norm >= 0.25:
        raise SupportTooLarge(f"support square of half-width r={r} reaches radius {r * frame.square_norm:.4f} >= 1/4")
    img = np.linalg.norm(frame.from_chart([frame.eig_contract * r, frame.eig_expand * r]))
    img = max(img, np.linalg.norm(frame.from_chart([frame.eig_contract * r, -frame.eig_expand * r])))
    if img >= 0.5:
        raise SupportTooLarge(f"image of the support reaches radius {img:.4f} >= 1/2")


def make_cat_system(variant: str, r: float = 0.05, profile_params: Optional[dict] = None,
                    matrix=DEFAULT_MATRIX) -> SystemSpec:
    """Build and validate one of the torus maps.

    ``profile_params`` for LewowiczSmooth: ``mu_power``.  For PiecewiseHomeo:
    ``lip_lambda`` and ``inner_frac``, or explicit ``mu1_knots``/``mu2_knots``
    given as ``[[x...], [y...]]`` covering ``[-r, r]``.
    """
    params = dict(profile_params or {})
    frame = EigenFrame.from_matrix(matrix)
    if variant == LINEAR:
        return SystemSpec(LINEAR, frame, r=float(r or 0.0))
    if variant not in (LEWOWICZ, PIECEWISE):
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS[:3]} (use make_perturbation for Perturbed)")
    r = float(r)
    if not r > 0:
        raise InvalidProfile(f"bump radius r must be positive, got {r}")
    _check_support(frame, r)
    if variant == LEWOWICZ:
        prof = LewowiczProfile(r, frame.eig_contract, int(params.get("mu_power", 3)), frame.matrix_A)
    else:
        lam = float(params.get("lip_lambda", 0.5))
        if "mu1_knots" in params or "mu2_knots" in params:
            core = float(params.get("core", 0.5 * r))
            k1 = tuple(tuple(map(float, v)) for v in params["mu1_knots"])
            k2 = tuple(tuple(map(float, v)) for v in params["mu2_knots"])
            prof = PiecewiseProfile(r, frame.eig_contract, frame.eig_expand, lam, core, k1, k2, frame.matrix_A)
        else:
            prof = PiecewiseProfile.default(r, frame.eig_contract, frame.eig_expand, lam,
                                            float(params.get("inner_frac", 0.25)),
                                            float(params.get("core_frac", 0.5)), frame.matrix_A)
    prof.validate()
    return SystemSpec(variant, frame, r=r, profile=prof)


def make_perturbation(base: SystemSpec, displacement_params: Optional[dict] = None, seed: int = 0) -> SystemSpec:
    """g = f o tau with tau = id + phi, phi a smooth periodic displacement field.

    ``displacement_params``: ``sup_norm`` (required), ``angle`` (radians from the
    contracting direction, default 0), ``n_modes`` (default 3), ``max_wavenumber``
    (default 2).  Raises NotInvertible when phi is not a contraction.
    """
    p = dict(displacement_params or {})
    s = float(p.get("sup_norm", 0.0))
    if s < 0:
        raise ValueError("sup_norm must be nonnegative")
    n_modes = int(p.get("n_modes", 3))
    kmax = int(p.get("max_wavenumber", 2))
    rng = np.random.default_rng(seed)
    ks = []
    while len(ks) < n_modes:
        k = tuple(int(v) for v in rng.integers(-kmax, kmax + 1, size=2))
        if k != (0, 0) and k not in ks:
            ks.append(k)
    c = rng.uniform(0.5, 1.0, size=n_modes) * rng.choice([-1.0, 1.0], size=n_modes)
    c = c / np.sum(np.abs(c))
    ph = rng.uniform(0, 2 * math.pi, size=n_modes)
    fld = DisplacementField(s, float(p.get("angle", 0.0)), tuple(ks), tuple(float(x) for x in c),
                            tuple(float(x) for x in ph))
    return _perturbed_from_field(base, fld, seed)


def _perturbed_from_field(base, fld, seed):
    lip = fld.lipschitz()
    if lip >= 1:
        raise NotInvertible(f"displacement field has Lipschitz constant {lip:.4g} >= 1")
    return SystemSpec(PERTURBED, base.frame, r=base.r, base=base, field=fld, seed=seed)


def rho_bound(sys: SystemSpec) -> float:
    """Analytic upper bound on rho(base, sys) for a Perturbed system (0 otherwise).

    Forward: |f(x + phi) - f(x)| is bounded through the chart Lipschitz matrix of
    the base; backward: |tau^-1(q) - q| <= sup |phi|.
    """
    if sys.variant != PERTURBED:
        return 0.0
    fld = sys.field
    z = np.abs(sys.frame.chart_inv @ fld.direction(sys.frame))
    fwd = np.linalg.norm(sys.frame.chart, 2) * np.linalg.norm(lipschitz_matrix(sys.base) @ z)
    return fld.sup_norm * max(1.0, float(fwd))


# --- evaluation ------------------------------------------------------------------

def _frame_consts(frame, ops):
    if ops is MP:
        return frame.mp_consts()
    E, Ei = frame.chart, frame.chart_inv
    return frame.eig_contract, frame.eig_expand, ((E[0, 0], E[0, 1]), (E[1, 0], E[1, 1])), ((Ei[0, 0], Ei[0, 1]), (Ei[1, 0], Ei[1, 1]))


def _reduce(X, ops):
    if ops is MP:
        return X - mpmath.floor(X)
    return reduce_point(X)


def _bracket_solve(g, dg, target, lo, hi, ops, tol):
    """Solve g(x) = target for increasing g on [lo, hi] (bisection then guarded Newton)."""
    if ops is MP:
        for _ in range(60):
            mid = (lo + hi) / 2
            if g(mid) < target:
                lo = mid
            else:
                hi = mid
        x = (lo + hi) / 2
        for _ in range(200):
            fx = g(x) - target
            if fx == 0:
                return x
            if fx < 0:
                lo = x
            else:
                hi = x
            xn = x - fx / dg(x)
            if not lo <= xn <= hi:
                xn = (lo + hi) / 2
            if abs(xn - x) < tol:
                return xn
            x = xn
        raise NonConvergence("monotone inverse did not converge")
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        below = g(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    x = 0.5 * (lo + hi)
    for _ in range(2):
        xn = x - (g(x) - target) / dg(x)
        x = np.where((xn >= lo) & (xn <= hi), xn, x)
    return x


def _eig_forward(sys, x, y, ops):
    a, b, _, _ = _frame_consts(sys.frame, ops)
    if sys.variant == LEWOWICZ:
        pr = sys.profile
        return a * x + pr.lam(x, ops) * pr.mu(y, ops), b * y
    if sys.variant == PIECEWISE:
        return sys.profile.forward(x, y, ops)
    return a * x, b * y


def _eig_inverse(sys, x1, y1, ops):
    a, b, _, _ = _frame_consts(sys.frame, ops)
    if sys.variant == LEWOWICZ:
        pr = sys.profile
        y = y1 / b
        m = pr.mu(y, ops)
        r = ops.asreal(sys.r)
        if ops is MP:
            if m == 0 or abs(x1) >= a * r:
                return x1 / a, y
            tol = mpmath.mpf(10) ** (-(mpmath.mp.dps - 3))
            x = _bracket_solve(lambda s: a * s + pr.lam(s, MP) * m,
                               lambda s: a + pr.dlam(s, MP) * m, x1, -r, r, MP, tol)
            return x, y
        lo = np.full(np.shape(x1), -r)
        hi = np.full(np.shape(x1), r)
        x = _bracket_solve(lambda s: a * s + pr.lam(s) * m, lambda s: a + pr.dlam(s) * m, x1, lo, hi, NP, 0)
        x = np.where((m == 0) | (np.abs(x1) >= a * r), x1 / a, x)
        return x, y
    if sys.variant == PIECEWISE:
        return sys.profile.inverse(x1, y1, ops)
    return x1 / a, y1 / b


def _local_map(sys, X, Y, ops, inverse):
    """Apply F or F^-1 through the origin-centred lift and return reduced coordinates."""
    _, _, E, Ei = _frame_consts(sys.frame, ops)
    Xc = X - ops.nint(X)
    Yc = Y - ops.nint(Y)
    x = Ei[0][0] * Xc + Ei[0][1] * Yc
    y = Ei[1][0] * Xc + Ei[1][1] * Yc
    x1, y1 = (_eig_inverse if inverse else _eig_forward)(sys, x, y, ops)
    return _reduce(E[0][0] * x1 + E[0][1] * y1, ops), _reduce(E[1][0] * x1 + E[1][1] * y1, ops)


def _tau(sys, X, Y, ops, sign=1):
    fld = sys.field
    u = fld.direction(sys.frame)
    amp = ops.asreal(fld.sup_norm) * fld.psi(X, Y, ops) * sign
    return X + amp * ops.asreal(u[0]), Y + amp * ops.asreal(u[1])


def _tau_inverse(sys, X, Y, ops):
    fld = sys.field
    lip = fld.lipschitz()
    if ops is MP:
        tol = mpmath.mpf(10) ** (-(mpmath.mp.dps - 3))
        max_iter = 20 + int(3 * mpmath.mp.dps / max(-math.log10(max(lip, 1e-300)), 0.05))
    else:
        tol = 0.0
        max_iter = 100
    # fixed point of x = q - phi(x); lifts used, reduce at the end
    x, y = X, Y
    for i in range(max_iter):
        xn, yn = _tau(sys, x, y, ops, sign=-1)
        xn, yn = xn - x + X, yn - y + Y
        dx = ops.abs(xn - x)
        dy = ops.abs(yn - y)
        x, y = xn, yn
        if ops is MP:
            if dx <= tol and dy <= tol:
                return _reduce(x, ops), _reduce(y, ops)
        elif float(np.max(dx, initial=0.0)) == 0.0 and float(np.max(dy, initial=0.0)) == 0.0:
            break
    if ops is MP:
        raise NonConvergence("tau inverse did not converge in mp arithmetic")
    tx, ty = _tau(sys, x, y, ops)
    res = np.max(np.abs(np.stack([tx - X, ty - Y])), initial=0.0)
    if res > 1e-12:
        raise NonConvergence(f"tau inverse residual {res:.3e} after {max_iter} iterations")
    return _reduce(x, ops), _reduce(y, ops)


def _apply(sys: SystemSpec, X, Y, ops, inverse=False):
    if sys.variant == LINEAR:
        M = sys.frame.A_inv if inverse else sys.frame.A
        a, b, c, d = (int(v) for v in M.ravel())
        return _reduce(a * X + b * Y, ops), _reduce(c * X + d * Y, ops)
    if sys.variant == PERTURBED:
        if inverse:
            X1, Y1 = _apply(sys.base, X, Y, ops, inverse=True)
            return _tau_inverse(sys, X1, Y1, ops)
        X1, Y1 = _tau(sys, X, Y, ops)
        return _apply(sys.base, _reduce(X1, ops), _reduce(Y1, ops), ops)
    return _local_map(sys, X, Y, ops, inverse)


def eval_forward(sys: SystemSpec, p) -> np.ndarray:
    """f(p) for torus point(s) ``p`` of shape ``(..., 2)``."""
    p = reduce_point(p)
    X, Y = _apply(sys, p[..., 0], p[..., 1], NP)
    return np.stack([X, Y], axis=-1)


def eval_inverse(sys: SystemSpec, p) -> np.ndarray:
    p = reduce_point(p)
    X, Y = _apply(sys, p[..., 0], p[..., 1], NP, inverse=True)
    return np.stack([X, Y], axis=-1)


def mp_forward(sys: SystemSpec, p):
    """f on a scalar mpf pair at the ambient precision."""
    return _apply(sys, mpmath.mpf(p[0]), mpmath.mpf(p[1]), MP)


def mp_inverse(sys: SystemSpec, p):
    return _apply(sys, mpmath.mpf(p[0]), mpmath.mpf(p[1]), MP, inverse=True)


def iterate(sys: SystemSpec, p, k: int) -> np.ndarray:
    """f^k(p) for integer k (negative k uses the inverse)."""
    out = reduce_point(p)
    step = eval_forward if k >= 0 else eval_inverse
    for _ in range(abs(k)):
        out = step(sys, out)
    return out


def eigen_coords(frame: EigenFrame, p) -> np.ndarray:
    """(x, y) eigen coordinates of the lift of ``p`` nearest the origin."""
    p = np.asarray(p, dtype=float)
    return frame.to_chart(p - np.rint(p))


def jacobian_at(sys: SystemSpec, p) -> np.ndarray:
    """Df at ``p`` in eigen coordinates (rows: contracting, expanding component)."""
    if not sys.differentiable:
        raise NotDifferentiable(f"{sys.variant} is only a homeomorphism")
    a, b = sys.alpha, sys.beta
    if sys.variant == LINEAR:
        return np.diag([a, b])
    if sys.variant == LEWOWICZ:
        x, y = eigen_coords(sys.frame, p)
        pr = sys.profile
        return np.array([
            [a + float(pr.dlam(x)) * float(pr.mu(y)), float(pr.lam(x)) * float(pr.dmu(y))],
            [0.0, b],
        ])
    # Perturbed: D(f o tau) = Df(tau p) D tau(p)
    fld = sys.field
    P = reduce_point(p)
    X, Y = P
    g = np.zeros(2)
    for c, (k1, k2), ph in zip(fld.coeffs, fld.wavevectors, fld.phases):
        g += -2 * math.pi * c * math.sin(2 * math.pi * (k1 * X + k2 * Y) + ph) * np.array([k1, k2], dtype=float)
    u_std = fld.direction(sys.frame)
    Dtau_std = np.eye(2) + fld.sup_norm * np.outer(u_std, g)
    Dtau = sys.frame.chart_inv @ Dtau_std @ sys.frame.chart
    Xt, Yt = _tau(sys, np.float64(X), np.float64(Y), NP)
    return jacobian_at(sys.base, reduce_point([Xt, Yt])) @ Dtau


def lipschitz_matrix(sys: SystemSpec) -> np.ndarray:
    """Entrywise bounds ``M`` with ``|f(q) - f(p)|_chart <= M |q - p|_chart`` componentwise."""
    a, b = sys.alpha, sys.beta
    if sys.variant == LINEAR:
        return np.diag([a, b])
    if sys.variant == LEWOWICZ:
        pr = sys.profile
        # sup of alpha + lambda' mu is 1, attained at the origin
        return np.array([[1.0, pr.lam_sup * pr.dmu_sup], [0.0, b]])
    if sys.variant == PIECEWISE:
        return sys.profile.lipschitz_matrix()
    fld = sys.field
    u = np.array([abs(math.cos(fld.angle)), abs(math.sin(fld.angle))])
    Mtau = np.eye(2) + fld.sup_norm * np.outer(u, fld.grad_bounds(sys.frame))
    return lipschitz_matrix(sys.base) @ Mtau


def with_seed(sys: SystemSpec, seed) -> SystemSpec:
    return replace(sys, seed=seed)
