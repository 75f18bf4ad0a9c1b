"""Arithmetic backends shared by the map code.

The same map formulas are evaluated on numpy float arrays (grids, solver
boxes) and on scalar ``mpmath.mpf`` values (long orbits whose expanding
component must be carried with many digits).  Map code only touches the
handful of primitives below.
"""

from __future__ import annotations

import math

import mpmath
import numpy as np


class NumpyOps:
    name = "numpy"

    @staticmethod
    def asreal(x):
        return np.asarray(x, dtype=float)

    abs = staticmethod(np.abs)
    floor = staticmethod(np.floor)
    sqrt = staticmethod(np.sqrt)
    maximum = staticmethod(np.maximum)
    minimum = staticmethod(np.minimum)
    sign = staticmethod(np.sign)
    cos = staticmethod(np.cos)
    sin = staticmethod(np.sin)
    pi = np.pi

    @staticmethod
    def where(cond, a, b):
        return np.where(cond, a, b)

    @staticmethod
    def any(cond) -> bool:
        return bool(np.any(cond))

    @staticmethod
    def nint(x):
        return np.rint(x)


class MpOps:
    """Scalar mpmath backend; precision follows the ambient ``mp.dps``."""

    name = "mpmath"

    @staticmethod
    def asreal(x):
        return mpmath.mpf(x)

    @staticmethod
    def abs(x):
        return abs(x)

    floor = staticmethod(mpmath.floor)
    sqrt = staticmethod(mpmath.sqrt)
    nint = staticmethod(mpmath.nint)
    cos = staticmethod(mpmath.cos)
    sin = staticmethod(mpmath.sin)

    @property
    def pi(self):
        return +mpmath.pi

    @staticmethod
    def maximum(a, b):
        return a if a >= b else b

    @staticmethod
    def minimum(a, b):
        return a if a <= b else b

    @staticmethod
    def sign(x):
        return mpmath.sign(x)

    @staticmethod
    def where(cond, a, b):
        return a if cond else b

    @staticmethod
    def any(cond) -> bool:
        return bool(cond)


NP = NumpyOps()
MP = MpOps()


def digits_for_orbit(m: int, lipschitz: float, guard: int = 30) -> int:
    """Decimal digits needed to follow ``m`` steps of a map with rate ``lipschitz``."""
    return int(math.ceil(max(m, 0) * math.log10(max(lipschitz, 1.0)))) + guard
