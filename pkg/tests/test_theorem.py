"""Scalar shrinkage traces: closed forms, a golden-section oracle, and the
agreement of the two derivative routes."""

import numpy as np
import pytest

from prunelab.errors import BracketError, DomainError, SaddleError
from prunelab.theorem import (
    FamilyCase,
    ScalarLoss,
    dlambda_direct,
    dlambda_implicit,
    find_local_min,
    lambda_of_omega,
    penalized,
    quadratic_minimum,
    standard_families,
    sweep_lambda,
)


def golden_min(f, a, b, tol=1e-11):
    """Golden-section search, the slow independent minimizer."""
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = f(c), f(d)
    while abs(b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def quad(c=1.0, a=1.0):
    return ScalarLoss(
        name="quad",
        f=lambda w: 0.5 * a * (w - c) ** 2,
        df=lambda w: a * (w - c),
        d2f=lambda w: a,
    )


def test_find_local_min_quadratic_closed_form():
    for lam in (0.0, 0.5, 1.0, 2.5):
        w = find_local_min(quad(), lam, 1e-9, 4.0)
        np.testing.assert_allclose(w, quadratic_minimum(1.0, lam), rtol=1e-10)
    np.testing.assert_allclose(
        find_local_min(quad(c=0.8, a=2.0), 1.0, 1e-9, 4.0),
        quadratic_minimum(0.8, 1.0, a=2.0), rtol=1e-10,
    )


def test_find_local_min_residual_is_tiny():
    loss = quad(c=1.3, a=0.7)
    lam = 0.4
    w = find_local_min(loss, lam, 1e-9, 4.0)
    _, dy, _ = penalized(loss, lam)
    assert abs(dy(w)) < 1e-10


def test_find_local_min_requires_bracketing_slopes():
    hill = ScalarLoss("hill", f=lambda w: -0.5 * w**2, df=lambda w: -w, d2f=lambda w: -1.0)
    with pytest.raises(BracketError):
        find_local_min(hill, 0.0, 0.1, 2.0)


def test_find_local_min_rejects_flat_top():
    # slope vanishes on a concave stretch: the residual converges but the
    # curvature check must refuse to call it a minimum
    trap = ScalarLoss("trap", f=lambda w: 0.0, df=lambda w: (w - 1.0) ** 3,
                      d2f=lambda w: -1.0)
    with pytest.raises(SaddleError):
        find_local_min(trap, 0.0, 0.0, 2.0)


def test_lambda_of_omega_examples():
    # for the unit quadratic pulled to 1, lam(w) = (1 - w)/w
    loss = quad()
    np.testing.assert_allclose(lambda_of_omega(loss, 0.5), 1.0, rtol=1e-14)
    np.testing.assert_allclose(lambda_of_omega(loss, 0.25), 3.0, rtol=1e-14)
    for fn in (lambda: lambda_of_omega(loss, 0.0),
               lambda: dlambda_direct(loss, 0.0),
               lambda: dlambda_implicit(loss, 0.0, 1.0)):
        with pytest.raises(DomainError):
            fn()


def test_derivative_routes_hand_value():
    # unit quadratic at w = 0.5, lam = 1: both routes give exactly -4
    loss = quad()
    assert dlambda_direct(loss, 0.5) == -4.0
    assert dlambda_implicit(loss, 0.5, 1.0) == -4.0


def test_round_trip_omega_lambda():
    loss = quad(c=1.5, a=1.2)
    for lam in (0.1, 0.7, 2.0):
        w = find_local_min(loss, lam, 1e-9, 4.0)
        np.testing.assert_allclose(lambda_of_omega(loss, w), lam, atol=1e-8)


def test_sweep_quadratic_matches_closed_form():
    lambdas = np.linspace(0.0, 3.0, 61)
    trace = sweep_lambda(quad(), lambdas, 1e-9, 4.0)
    assert len(trace) == 61
    np.testing.assert_allclose(trace.omegas, 1.0 / (1.0 + lambdas), rtol=0, atol=1e-10)


def test_sweep_against_golden_section():
    # an independent minimizer must land on the same minima
    loss = ScalarLoss(
        name="cosh",
        f=lambda w: np.cosh(w - 1.2) - 1.0,
        df=lambda w: np.sinh(w - 1.2),
        d2f=lambda w: np.cosh(w - 1.2),
    )
    lambdas = np.linspace(0.0, 2.0, 21)
    trace = sweep_lambda(loss, lambdas, 1e-9, 4.0)
    assert len(trace) == 21
    for lam, w in zip(trace.lambdas, trace.omegas):
        y, _, _ = penalized(loss, lam)
        np.testing.assert_allclose(w, golden_min(y, 1e-9, 4.0), atol=1e-8)


def test_sweep_against_golden_section_negative_side():
    loss = ScalarLoss(
        name="cosh_neg",
        f=lambda w: np.cosh(w + 1.2) - 1.0,
        df=lambda w: np.sinh(w + 1.2),
        d2f=lambda w: np.cosh(w + 1.2),
    )
    trace = sweep_lambda(loss, np.linspace(0.0, 2.0, 21), -4.0, -1e-9)
    assert trace.side == "negative"
    for lam, w in zip(trace.lambdas, trace.omegas):
        y, _, _ = penalized(loss, lam)
        np.testing.assert_allclose(w, golden_min(y, -4.0, -1e-9), atol=1e-8)


def test_sweep_truncates_when_minimum_is_absorbed():
    # the shallow well loses its off-zero minimum at lam = 1; past that the
    # bracket has no sign change and the trace must stop, recording where
    well = ScalarLoss(
        name="well",
        f=lambda w: 0.25 * w**4 - 0.5 * w**2,
        df=lambda w: w**3 - w,
        d2f=lambda w: 3.0 * w**2 - 1.0,
    )
    lambdas = np.linspace(0.0, 1.2, 25)
    trace = sweep_lambda(well, lambdas, 1e-9, 4.0)
    assert trace.truncated_at is not None
    assert trace.truncated_at >= 1.0 - 1e-9
    assert len(trace) < 25
    np.testing.assert_allclose(trace.omegas[0], 1.0, atol=1e-9)
    assert trace.omegas[-1] < 0.2


def test_standard_families_cover_both_sides():
    cases = standard_families()
    names = {c.loss.name.split("(")[0] for c in cases}
    assert len(names) >= 5
    sides = {(c.loss.name, "pos" if c.hi > 0 else "neg") for c in cases}
    assert len(sides) == len(cases)
    for case in cases:
        assert isinstance(case, FamilyCase)
        steps = np.diff(np.asarray(case.lambdas))
        assert np.all(steps > 0) and np.all(steps <= 0.05 + 1e-12)


def test_standard_families_shrink_and_agree():
    for case in standard_families():
        trace = sweep_lambda(case.loss, np.array(case.lambdas), case.lo, case.hi)
        assert len(trace) >= 2, case.loss.name
        mags = np.abs(np.asarray(trace.omegas))
        assert np.all(np.diff(mags) < 0), case.loss.name
        for lam, w, curv in zip(trace.lambdas, trace.omegas, trace.curvatures):
            assert curv > 0.0
            _, dy, _ = penalized(case.loss, lam)
            assert abs(dy(w)) < 1e-10
            d1 = dlambda_direct(case.loss, w)
            d2 = dlambda_implicit(case.loss, w, lam)
            assert abs(d1 - d2) < 1e-8, case.loss.name


def test_derivative_sign_forces_shrinkage():
    # a growing factor moves the minimum toward zero: dlam/dw < 0 for
    # positive minima, > 0 for negative ones
    for case in standard_families():
        trace = sweep_lambda(case.loss, np.array(case.lambdas), case.lo, case.hi)
        for w in trace.omegas:
            d = dlambda_direct(case.loss, w)
            assert d < 0 if w > 0 else d > 0, case.loss.name
