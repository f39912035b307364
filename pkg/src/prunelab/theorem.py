"""Scalar model of weight decay: why a growing factor drags a weight to zero.

For a smooth loss L(w) and factor lam >= 0, consider the penalized objective

    Y(w) = L(w) + lam/2 * w**2.

At a local minimum, Y'(w) = 0 pins down the factor that makes w stationary:
lam(w) = -L'(w)/w.  Differentiating that relation two independent ways gives

    direct:    dlam/dw = (L'(w) - w*L''(w)) / w**2
    implicit:  dlam/dw = -(L''(w) + lam) / w

and at a genuine minimum (Y'' > 0) both must agree, with a sign that forces
|w| to shrink as the factor grows.  This module finds penalized minima for a
zoo of scalar losses and traces them as the factor sweeps upward, so the
shrinkage claim can be checked numerically rather than taken on faith.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import BracketError, DomainError, NumericError, SaddleError

STEP_TOL = 1e-12
RESIDUAL_TOL = 1e-10
MAX_REFINE = 200


@dataclass(frozen=True)
class ScalarLoss:
    """A scalar loss with analytic first and second derivatives."""

    name: str
    f: Callable[[float], float]
    df: Callable[[float], float]
    d2f: Callable[[float], float]


def penalized(loss: ScalarLoss, lam: float):
    """Value/slope/curvature of Y(w) = L(w) + lam/2 w^2 as three callables."""
    y = lambda w: loss.f(w) + 0.5 * lam * w * w
    dy = lambda w: loss.df(w) + lam * w
    d2y = lambda w: loss.d2f(w) + lam
    return y, dy, d2y


def lambda_of_omega(loss: ScalarLoss, w: float) -> float:
    """The factor that makes w stationary for the penalized objective."""
    if w == 0.0:
        raise DomainError("the stationarity relation lam = -L'(w)/w needs w != 0")
    return -loss.df(w) / w


def dlambda_direct(loss: ScalarLoss, w: float) -> float:
    if w == 0.0:
        raise DomainError("dlam/dw is undefined at w = 0")
    return (loss.df(w) - w * loss.d2f(w)) / (w * w)


def dlambda_implicit(loss: ScalarLoss, w: float, lam: float) -> float:
    if w == 0.0:
        raise DomainError("dlam/dw is undefined at w = 0")
    return -(loss.d2f(w) + lam) / w


def find_local_min(loss: ScalarLoss, lam: float, lo: float, hi: float) -> float:
    """Locate a minimum of the penalized objective inside [lo, hi].

    Requires a sign change Y'(lo) < 0 < Y'(hi).  Bisection narrows the
    bracket, Newton steps polish the root until the slope residual drops
    below RESIDUAL_TOL, and the curvature at the result must be positive or
    the point is rejected as a saddle/maximum.
    """
    _, dy, d2y = penalized(loss, lam)
    flo, fhi = dy(lo), dy(hi)
    if not (flo < 0.0 < fhi):
        raise BracketError(
            f"no minimum bracketed in [{lo:g}, {hi:g}]: slopes ({flo:g}, {fhi:g})"
        )
    a, b = lo, hi
    for _ in range(80):
        mid = 0.5 * (a + b)
        if dy(mid) < 0.0:
            a = mid
        else:
            b = mid
        if b - a < 1e-8 * max(1.0, abs(a)):
            break
    w = 0.5 * (a + b)
    for _ in range(MAX_REFINE):
        slope, curv = dy(w), d2y(w)
        if abs(slope) < RESIDUAL_TOL:
            break
        if curv <= 0.0:
            break
        step = slope / curv
        w_new = w - step
        if not (a <= w_new <= b):
            w_new = 0.5 * (a + b)
            if dy(w_new) < 0.0:
                a = w_new
            else:
                b = w_new
        w = w_new
        if abs(step) < STEP_TOL * max(1.0, abs(w)):
            break
    if abs(dy(w)) >= RESIDUAL_TOL:
        raise NumericError(
            f"minimum refinement stalled at w={w:g} with slope {dy(w):g}"
        )
    if d2y(w) <= 0.0:
        raise SaddleError(f"stationary point at w={w:g} has curvature {d2y(w):g}")
    return float(w)


@dataclass
class MinimumTrace:
    """One family's minimum followed across an ascending factor grid."""

    family: str
    side: str
    lambdas: list[float] = field(default_factory=list)
    omegas: list[float] = field(default_factory=list)
    curvatures: list[float] = field(default_factory=list)
    truncated_at: float | None = None

    def __len__(self):
        return len(self.lambdas)


def sweep_lambda(
    loss: ScalarLoss,
    lambdas: np.ndarray,
    lo: float,
    hi: float,
) -> MinimumTrace:
    """Track one penalized minimum as the factor increases.

    Each step re-brackets around the previous minimum (the minimum only moves
    toward zero, never outward).  If the bracket collapses, the minimum has
    been absorbed and the trace stops there; that is recorded, not an error.
    """
    side = "negative" if hi <= 0 else "positive"
    trace = MinimumTrace(family=loss.name, side=side)
    cur_lo, cur_hi = lo, hi
    for lam in np.asarray(lambdas, dtype=np.float64):
        try:
            w = find_local_min(loss, float(lam), cur_lo, cur_hi)
        except (BracketError, SaddleError, NumericError):
            trace.truncated_at = float(lam)
            break
        _, _, d2y = penalized(loss, float(lam))
        trace.lambdas.append(float(lam))
        trace.omegas.append(w)
        trace.curvatures.append(float(d2y(w)))
        # shrink the outer edge toward the current minimum; keep the inner
        # edge fixed near zero so the shrinking root stays bracketed
        margin = 0.25 * max(abs(w), 1e-3)
        if side == "positive":
            cur_hi = w + margin
        else:
            cur_lo = w - margin
    return trace


# -- loss family zoo ---------------------------------------------------------


def _quadratic(c: float, a: float = 1.0) -> ScalarLoss:
    return ScalarLoss(
        name=f"quadratic(a={a:g} c={c:g})",  # no comma, names land in CSV fields
        f=lambda w: 0.5 * a * (w - c) ** 2,
        df=lambda w: a * (w - c),
        d2f=lambda w: a,
    )


def quadratic_minimum(c: float, lam: float, a: float = 1.0) -> float:
    """Closed form for the penalized quadratic minimum: a*c / (a + lam)."""
    return a * c / (a + lam)


def _quartic_double_well() -> ScalarLoss:
    return ScalarLoss(
        name="quartic_double_well",
        f=lambda w: 0.25 * w**4 - 0.5 * w**2,
        df=lambda w: w**3 - w,
        d2f=lambda w: 3.0 * w**2 - 1.0,
    )


def _cosh_well(c: float) -> ScalarLoss:
    return ScalarLoss(
        name=f"cosh_well(c={c:g})",
        f=lambda w: np.cosh(w - c) - 1.0,
        df=lambda w: np.sinh(w - c),
        d2f=lambda w: np.cosh(w - c),
    )


def _logcosh_pull(c: float) -> ScalarLoss:
    return ScalarLoss(
        name=f"logcosh_pull(c={c:g})",
        f=lambda w: float(np.log(np.cosh(w - c))),
        df=lambda w: float(np.tanh(w - c)),
        d2f=lambda w: float(1.0 / np.cosh(w - c) ** 2),
    )


def _cube_root_pull(b: float) -> ScalarLoss:
    return ScalarLoss(
        name=f"cube_root_pull(b={b:g})",
        f=lambda w: 0.25 * w**4 - b * w,
        df=lambda w: w**3 - b,
        d2f=lambda w: 3.0 * w**2,
    )


@dataclass(frozen=True)
class FamilyCase:
    """A loss plus one bracket known to contain a penalized minimum."""

    loss: ScalarLoss
    lo: float
    hi: float
    lambdas: tuple[float, ...]


def standard_families() -> list[FamilyCase]:
    """Every family twice: a minimum on each side of zero.

    Grids keep the factor increment at 0.05 or below: the shrinkage claim is
    local, so the tracked minimum must not be outrun between steps.
    """
    lam_grid = tuple(np.linspace(0.0, 3.0, 61))
    well_grid = tuple(np.linspace(0.0, 0.96, 25))
    cases = []
    for s in (+1.0, -1.0):
        lo, hi = (1e-9, 4.0) if s > 0 else (-4.0, -1e-9)
        cases.append(FamilyCase(_quadratic(c=s * 1.0), lo, hi, lam_grid))
        cases.append(FamilyCase(_quadratic(c=s * 0.8, a=2.0), lo, hi, lam_grid))
        cases.append(FamilyCase(_quartic_double_well(), lo, hi, well_grid))
        cases.append(FamilyCase(_cosh_well(c=s * 1.2), lo, hi, lam_grid))
        cases.append(FamilyCase(_logcosh_pull(c=s * 1.5), lo, hi, lam_grid))
        cases.append(FamilyCase(_cube_root_pull(b=s * 1.0), lo, hi, lam_grid))
    return cases
