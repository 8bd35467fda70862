import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate as spi

from jumpsde.yw import (
    a,
    d_phi,
    d_phi_quadrature,
    second_order_bound_check,
    log_increment_identity,
    make_yw,
    vanishing_check,
    verify_properties,
)

GRID = np.linspace(-2.0, 2.0, 100000)


def test_first_level_endpoints():
    yw = make_yw(1)
    assert yw.a_lo == pytest.approx(0.3678794, abs=1e-7)
    assert yw.a_hi == 1.0


def test_log_gap_equals_level():
    assert math.log(make_yw(2).a_hi / make_yw(2).a_lo) == pytest.approx(2.0, rel=1e-15)


@pytest.mark.parametrize("k", [1, 3, 6])
def test_phi_flat_inside_and_slope_one_outside(k):
    yw = make_yw(k)
    inner = np.linspace(-yw.a_lo, yw.a_lo, 101)
    assert np.all(yw.phi(inner) == 0)
    outer = np.concatenate([np.linspace(yw.a_hi, 2, 50), -np.linspace(yw.a_hi, 2, 50)])
    assert np.allclose(yw.phi_prime(outer), np.sign(outer), atol=1e-14, rtol=0)


def test_phi_at_origin():
    yw = make_yw(4)
    assert yw.phi(0.0) == 0 and yw.phi_prime(0.0) == 0


@pytest.mark.parametrize("k", range(1, 11))
def test_properties_hold_to_machine_tolerance(k):
    rep = verify_properties(make_yw(k), GRID, 1e-12)
    assert rep.passed, rep.failures()


@pytest.mark.parametrize("k", [1, 2, 5])
def test_psi_mass_by_independent_quadrature(k):
    yw = make_yw(k)
    val, _ = spi.quad(lambda x: float(yw.psi(np.array(x))), yw.a_lo, yw.a_hi,
                      points=[math.exp(s) for s in yw.s[1:3]], epsabs=1e-14, epsrel=1e-13, limit=400)
    assert val == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("k", [1, 4])
def test_derivatives_match_finite_differences(k):
    yw = make_yw(k)
    knots = np.array([math.exp(s) for s in yw.s])
    z = np.linspace(-1.5, 1.5, 2001)
    z = z[np.min(np.abs(np.abs(z)[:, None] - knots[None, :]), axis=1) > 1e-3]
    step = 1e-5
    d1 = (yw.phi(z + step) - yw.phi(z - step)) / (2 * step)
    d2 = (yw.phi_prime(z + step) - yw.phi_prime(z - step)) / (2 * step)
    assert np.max(np.abs(d1 - yw.phi_prime(z))) < 1e-8
    assert np.max(np.abs(d2 - yw.phi_second(z))) < 1e-5 / yw.a_lo


def test_phi_at_one_approaches_one():
    vals = [float(make_yw(k).phi(1.0)) for k in range(1, 11)]
    assert np.all(np.diff(vals) >= 0)
    assert 1.0 - vals[-1] < 1e-3


def test_phi_is_even():
    yw = make_yw(3)
    z = np.linspace(0, 2, 333)
    assert np.array_equal(yw.phi(z), yw.phi(-z))


def test_d_phi_basic_cases():
    yw = make_yw(2)
    assert d_phi(yw, 0.7, 0.0) == 0
    assert d_phi(yw, 0.5 * yw.a_lo, -yw.a_lo) == 0


def test_d_phi_matches_quadrature():
    yw = make_yw(1)
    assert float(d_phi(yw, yw.a_hi, yw.a_hi)) == pytest.approx(d_phi_quadrature(yw, yw.a_hi, yw.a_hi), abs=1e-8)
    assert float(d_phi(yw, 0.2, 0.6)) == pytest.approx(d_phi_quadrature(yw, 0.2, 0.6), abs=1e-8)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.floats(-2, 2), st.floats(-2, 2))
def test_d_phi_nonnegative_and_matches_quadrature(k, zeta, h):
    yw = make_yw(k)
    v = float(d_phi(yw, zeta, h))
    assert v >= 0
    assert v == pytest.approx(d_phi_quadrature(yw, zeta, h), abs=1e-9)


def test_identity_reference_value():
    assert float(log_increment_identity(1.0, 1.0)) == pytest.approx(2 * math.log(2) - 1, abs=1e-12)


def test_identity_check_with_zero_increment():
    out = second_order_bound_check(0.5, 0.0, 0.0, 1)
    assert out["identity_closed"] == 0 and out["identity_quadrature"] == 0 and out["d_phi"] == 0


def test_inequality_chain_reference_pair():
    a1 = a(1)
    out = second_order_bound_check(a1 / 2, 0.0, -a1 / 4, 1)
    assert out["slack_lower"] >= -1e-12 and out["slack_upper"] >= -1e-12


def test_sign_change_is_vacuous():
    assert second_order_bound_check(0.1, 0.0, -0.5, 2)["status"] == "bound vacuous"


def test_vanishing_far_from_support():
    k, c = 3, 0.5
    diff = 2 * a(k - 1) / (1 - c)
    for l in (-0.4 * diff, 0.0, 1.0):
        assert vanishing_check(c, diff, 0.0, l, k)


def test_vanishing_may_fail_close_to_support():
    k, c = 2, 0.5
    diff = a(k - 1) / 2 / (1 - c)
    l = -(diff - 0.5 * (a(k) + a(k - 1)))
    assert float(d_phi(make_yw(k), diff, l)) > 0


def test_vanishing_rejects_non_monotone_regime():
    with pytest.raises(ValueError):
        vanishing_check(0.5, 1.0, 0.0, -2.0, 1)


def test_level_must_be_positive():
    with pytest.raises(ValueError):
        make_yw(0)
