"""Real branches of the Lambert W function.

W0 is the principal branch on [-1/e, inf) with W0 >= -1; Wm1 the lower
branch on [-1/e, 0) with Wm1 <= -1.  Both are started from the usual
branch-point / asymptotic approximations and polished with Halley's method.
"""

from __future__ import annotations

import math
from enum import Enum

from .errors import DomainError, NumericalError

E = math.e
INV_E = 0.36787944117144233
# 1/e = INV_E + _INV_E_LO to about 32 digits
_INV_E_LO = -1.2428753672788363e-17

# Series about the branch point in p = +-sqrt(2(1 + e x)), Corless et al. (1996).
_BRANCH_SERIES = (
    -1.0,
    1.0,
    -1.0 / 3.0,
    11.0 / 72.0,
    -43.0 / 540.0,
    769.0 / 17280.0,
    -221.0 / 8505.0,
    680863.0 / 43545600.0,
)

_MAX_ITER = 64


class LambertBranch(str, Enum):
    W0 = "W0"
    WM1 = "Wm1"


def _branch_p(x: float, branch: LambertBranch) -> float:
    # 1 + e*x = e*(x + 1/e); x + INV_E is exact near the branch point
    q = max(2.0 * E * ((x + INV_E) + _INV_E_LO), 0.0)
    p = math.sqrt(q)
    return p if branch is LambertBranch.W0 else -p


def _series(p: float) -> float:
    w = 0.0
    for c in reversed(_BRANCH_SERIES):
        w = w * p + c
    return w


def _initial(x: float, branch: LambertBranch) -> float:
    if 1.0 + E * x < 0.25:
        return _series(_branch_p(x, branch))
    if branch is LambertBranch.W0:
        if x < 3.0:
            return math.log1p(x) * (1.0 - math.log1p(math.log1p(x)) / (2.0 + math.log1p(x)))
        l1 = math.log(x)
        l2 = math.log(l1)
        return l1 - l2 + l2 / l1
    l1 = math.log(-x)
    l2 = math.log(-l1)
    return l1 - l2 + l2 / l1


def _halley(x: float, w: float) -> float:
    for _ in range(_MAX_ITER):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        if wp1 == 0.0:
            return w
        denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        if denom == 0.0:
            return w
        step = f / denom
        w_new = w - step
        if abs(step) <= 1e-15 * (1.0 + abs(w_new)) or f == 0.0:
            return w_new
        w = w_new
    if abs(w * math.exp(w) - x) <= 1e-15 * max(1.0, abs(x)):
        return w
    raise NumericalError(f"Halley iteration for Lambert W({x}) did not converge")


def _newton_log(x: float, w: float, branch: LambertBranch) -> float:
    # Solve w + log(|w|) = log(|x|); well conditioned for large |w|.
    lx = math.log(abs(x))
    for _ in range(_MAX_ITER):
        h = w + math.log(abs(w)) - lx
        step = h / (1.0 + 1.0 / w)
        w_new = w - step
        if branch is LambertBranch.WM1 and w_new >= -1.0:
            w_new = 0.5 * (w - 1.0)
        if abs(step) <= 4e-16 * abs(w_new):
            return w_new
        w = w_new
    raise NumericalError(f"Newton iteration for Lambert W({x}) did not converge")


def lambert_w(branch: LambertBranch | str, x: float) -> float:
    """Real Lambert W: the w with w*exp(w) = x on the requested branch."""
    branch = LambertBranch(branch)
    x = float(x)
    if math.isnan(x):
        raise DomainError("Lambert W of NaN")
    if x < -INV_E:
        # tolerate a rounding-level undershoot of the branch point
        if x < -INV_E * (1.0 + 4e-16):
            raise DomainError(f"Lambert W is real only for x >= -1/e, got {x}")
        x = -INV_E
    if branch is LambertBranch.WM1 and x >= 0.0:
        raise DomainError(f"branch Wm1 requires -1/e <= x < 0, got {x}")
    if branch is LambertBranch.W0 and math.isinf(x):
        return math.inf
    if x == 0.0:
        return 0.0
    p = _branch_p(x, branch)
    if abs(p) < 1e-2:
        return _series(p)
    w = _initial(x, branch)
    if (branch is LambertBranch.WM1 and x > -1e-4) or (branch is LambertBranch.W0 and x > 1e4):
        return _newton_log(x, w, branch)
    w = _halley(x, w)
    if branch is LambertBranch.W0 and w < -1.0:
        w = -1.0
    if branch is LambertBranch.WM1 and w > -1.0:
        w = -1.0
    return w
