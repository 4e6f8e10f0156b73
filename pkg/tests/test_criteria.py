import math

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from stochks.criteria import (
    AS_BLOWUP,
    NO_CRITERION,
    PP_BLOWUP,
    T1_SMALLER,
    T2_SMALLER,
    TIE,
    UNDEFINED,
    evaluate_criteria,
    gronwall_envelope,
    ordering_check,
    time_t1,
    time_t2,
)

PI = math.pi


def envelope_root(chi, gamma, V0, c_sigma):
    """Root of the envelope by high-precision bisection (independent of the closed form)."""
    mpmath.mp.dps = 40
    kappa = mpmath.mpf(chi) / (4 * mpmath.pi) - 2
    b = 2 * mpmath.mpf(gamma) * c_sigma
    f = lambda t: V0 * mpmath.e ** (b * t) - kappa * mpmath.expm1(b * t) / b
    lo, hi = mpmath.mpf(0), mpmath.mpf(1)
    while f(hi) > 0:
        hi *= 2
    return float(mpmath.findroot(f, (lo, hi), solver="bisect", tol=1e-30))


def test_reference_case():
    rep = evaluate_criteria(64 * PI, 1.0, 1.0, 2.0)
    assert rep.T1 == pytest.approx(1 / 12, rel=1e-14)
    assert rep.T_star == rep.T1
    assert rep.regime == AS_BLOWUP
    assert rep.chi_as == pytest.approx(16 * PI) and rep.chi_pp == pytest.approx(24 * PI)
    # frozen: T2 at the same point
    assert rep.T2 == pytest.approx(envelope_root(64 * PI, 1.0, 1.0, 2.0), rel=1e-12)
    assert rep.T2 == pytest.approx(-math.log(5 / 7) / 4, rel=1e-14)
    assert rep.T2 == pytest.approx(0.0841180591553032, rel=1e-12)


def test_cli_example_values():
    rep = evaluate_criteria(200.0, 1.0, 1.0, 2.0)
    assert rep.regime == AS_BLOWUP and 200 > 16 * PI


def test_pp_regime_used_in_acceptance():
    c = (2 * PI / 20) ** 2
    rep = evaluate_criteria(14 * PI, 1.0, 1.0, c)
    assert rep.regime == PP_BLOWUP and rep.T1 is None
    assert rep.chi_pp < 14 * PI < rep.chi_as
    assert rep.T2 == pytest.approx(envelope_root(14 * PI, 1.0, 1.0, c), rel=1e-12)
    assert rep.T2 == pytest.approx(0.7148045720645335, rel=1e-12)


def test_threshold_edge_cases():
    # chi exactly at chi_as: T1 undefined
    c = 0.1
    rep = evaluate_criteria(16 * PI, 1.0, 1.0, c)
    assert rep.T1 is None and rep.regime == PP_BLOWUP
    rep = evaluate_criteria(4 * PI, 0.5, 1.0, c)
    assert rep.regime == NO_CRITERION and rep.T_star is None
    with pytest.raises(ValueError):
        evaluate_criteria(-1.0, 0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        evaluate_criteria(10.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        evaluate_criteria(10.0, 0.0, 1.0, float("nan"))


@pytest.mark.parametrize("gamma", [1e-3, 1e-6, 1e-9])
def test_deterministic_limit(gamma):
    chi, V0, c = 16 * PI, 1.0, 0.7
    rep = evaluate_criteria(chi, gamma, V0, c)
    det = 4 * PI * V0 / (chi - 8 * PI)
    assert rep.chi_as == pytest.approx(8 * PI, rel=2 * gamma)
    assert rep.chi_pp == pytest.approx(8 * PI, rel=2 * gamma)
    assert rep.T_star == pytest.approx(det, rel=10 * gamma)
    exact = evaluate_criteria(chi, 0.0, V0, c)
    assert exact.T1 == exact.T2 == pytest.approx(det, rel=1e-15)


@settings(max_examples=60, deadline=None)
@given(
    chi=st.floats(8.5 * PI, 80 * PI),
    gamma=st.floats(0.01, 3.0),
    V0=st.floats(0.1, 3.0),
    c=st.floats(0.01, 3.0),
)
def test_envelope_root_property(chi, gamma, V0, c):
    t2 = time_t2(chi, gamma, V0, c)
    assume(t2 is not None)
    assert abs(gronwall_envelope(chi, gamma, V0, c, t2)) < 1e-12 * max(1.0, V0)
    assert gronwall_envelope(chi, gamma, V0, c, 0.0) == pytest.approx(V0, rel=1e-15)
    # envelope decreasing on [0, T2]
    t = np.linspace(0, t2, 20)
    assert np.all(np.diff(gronwall_envelope(chi, gamma, V0, c, t)) < 0)


@settings(max_examples=60, deadline=None)
@given(chi=st.floats(1.0, 200 * PI), gamma=st.floats(0.0, 3.0), V0=st.floats(0.1, 3.0), c=st.floats(0.0, 3.0))
def test_regime_consistency(chi, gamma, V0, c):
    rep = evaluate_criteria(chi, gamma, V0, c)
    assert (rep.T1 is not None) == (chi > rep.chi_as)
    assert (rep.T2 is not None) == (chi > rep.chi_pp)
    if rep.T_star is not None:
        assert rep.T_star == min(t for t in (rep.T1, rep.T2) if t is not None)


def test_envelope_array_and_zero_noise():
    t = np.array([0.0, 0.5, 1.0])
    out = gronwall_envelope(12 * PI, 0.0, 1.0, 0.3, t)
    assert np.allclose(out, 1.0 - 1.0 * t)
    assert isinstance(gronwall_envelope(12 * PI, 1.0, 1.0, 0.3, 0.2), float)


def test_ordering():
    # V0 C_sigma = 0.5: T2 <= T1
    assert ordering_check(1.0, 0.5, 40 * PI, 1.0) == T2_SMALLER
    # V0 C_sigma = 2: T1 <= T2
    assert ordering_check(1.0, 2.0, 64 * PI, 1.0) == T1_SMALLER
    # V0 C_sigma = 1: the thresholds coincide; the times are compared numerically
    rep = evaluate_criteria(40 * PI, 1.0, 1.0, 1.0)
    assert rep.chi_as == rep.chi_pp
    assert ordering_check(1.0, 1.0, 40 * PI, 1.0) == (T2_SMALLER if rep.T2 < rep.T1 else T1_SMALLER)
    assert ordering_check(1.0, 1.0, 40 * PI, 1.0, rel_tol=0.5) == TIE
    # only T2 exists between the thresholds
    assert ordering_check(1.0, 0.5, 14 * PI, 1.0) == UNDEFINED
    assert time_t1(10.0, 0.0, 1.0) is None
