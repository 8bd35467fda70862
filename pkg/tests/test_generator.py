import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate as spi

from jumpsde.generator import (
    TestFunction,
    apply_generator,
    capped_linear,
    combine,
    cos_function,
    gaussian_bump,
    martingale_residual,
    second_difference,
    test_function,
)
from jumpsde.models import build_model, h_alpha, model_custom
from jumpsde.sde import TruncationParams

FUNCS = [cos_function(), gaussian_bump(0.7), capped_linear(2.0, 0.5)]


@pytest.mark.parametrize("fn", FUNCS, ids=lambda f: f.name)
def test_derivatives_are_consistent(fn):
    d1, d2 = fn.consistency(np.linspace(-4, 4, 801), step=1e-5)
    assert d1 < 1e-7 and d2 < 1e-5


@pytest.mark.parametrize("fn", FUNCS, ids=lambda f: f.name)
def test_declared_bounds_hold(fn):
    x = np.linspace(-6, 6, 120001)
    assert np.max(np.abs(fn.f(x))) <= fn.bounds["f"] + 1e-12
    assert np.max(np.abs(fn.f_prime(x))) <= fn.bounds["f1"] + 1e-12
    f2 = fn.f_second(x)
    assert np.max(np.abs(f2)) <= fn.bounds["f2"] + 1e-12
    f3 = np.gradient(f2, x)
    assert np.max(np.abs(f3)) <= fn.bounds["f3"] * (1 + 1e-3)


def test_test_function_requires_finite_bounds():
    with pytest.raises(ValueError):
        TestFunction("bad", np.cos, np.sin, np.cos, {"f": 1.0, "f1": math.inf, "f2": 1.0})


def test_unknown_test_function():
    with pytest.raises(ValueError):
        test_function("sinc")


def test_zero_model_generator_vanishes():
    model = model_custom().model
    val = apply_generator(model, cos_function(), np.linspace(-2, 2, 9))
    assert np.all(val.value == 0)


def test_pure_diffusion_on_cosine():
    model = build_model("brownian", {"sigma": 1.0}).model
    assert apply_generator(model, cos_function(), 0.0).value == pytest.approx(-0.5)
    x = np.linspace(-3, 3, 7)
    assert np.allclose(apply_generator(model, cos_function(), x).value, -0.5 * np.cos(x))


def test_locally_linear_function_reduces_to_first_order_terms():
    model = model_custom(
        b1={"family": "constant", "value": 0.3},
        g0={"family": "mark"},
        g1={"family": "mark"},
        mu0={"family": "point_masses", "points": [0.2, -0.1], "weights": [1.0, 2.0]},
        mu1={"family": "uniform_box", "lo": [0.0], "hi": [0.5], "total_mass": 2.0},
    ).model
    f = capped_linear(10.0, 1.0)
    val = apply_generator(model, f, 1.0).value
    # b + int g1 dmu1, with the uniform mean 0.25 times mass 2
    assert val == pytest.approx(0.3 + 0.5, abs=1e-12)


def test_single_atom_model_against_hand_formula():
    built = build_model("h_alpha", {"alpha": 0.5, "lam": 1.5})
    f = cos_function()
    x = np.array([0.0, 0.4, 2.0])
    jump = h_alpha(x, 0.5)
    expect = 1.5 * (np.cos(x + jump) - np.cos(x) + np.sin(x) * jump)
    assert np.allclose(apply_generator(built.model, f, x).value, expect, atol=1e-14)


def test_interval_model_against_nested_quadrature():
    model = build_model("bertoin_legall", {"nu": "uniform"}).model
    f = gaussian_bump(0.5)
    for x in (0.1, 0.55, 0.9):
        up, _ = spi.quad(lambda z: float(f.f(x + z * (1 - x)) - f.f(x)), 0, 1, epsabs=1e-14)
        down, _ = spi.quad(lambda z: float(f.f(x - z * x) - f.f(x)), 0, 1, epsabs=1e-14)
        # the compensator vanishes, so the f' term integrates to zero
        assert apply_generator(model, f, x).value == pytest.approx(x * up + (1 - x) * down, abs=1e-10)


def test_generic_path_matches_jump_law_path():
    built = build_model("bounded_jump")
    model = built.model
    x = np.array([-1.0, 0.2, 1.3])
    f = gaussian_bump(1.0)
    a = apply_generator(model, f, x).value
    # the bounded jump model has no jump law shortcut: cross-check by hand
    pts, w = np.array([0.5, 1.0]), np.array([1.0, 0.5])
    g = pts[None, :] * np.cos(x)[:, None]
    hand = np.sum(w * (f.f(x[:, None] + g) - f.f(x)[:, None] - f.f_prime(x)[:, None] * g), axis=1)
    assert np.allclose(a, hand, atol=1e-13)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-2, 2))
def test_generator_is_linear(a, b, x):
    model = build_model("bounded_jump").model
    f, g = cos_function(), gaussian_bump(0.8)
    lhs = apply_generator(model, combine([a, b], [f, g]), x).value
    rhs = a * apply_generator(model, f, x).value + b * apply_generator(model, g, x).value
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_constant_function_is_annihilated():
    model = build_model("doering_barczy", {"mu": "point"}).model
    const = TestFunction("one", lambda x: np.ones_like(np.asarray(x, float)),
                         lambda x: np.zeros_like(np.asarray(x, float)),
                         lambda x: np.zeros_like(np.asarray(x, float)), {"f": 1.0, "f1": 0.0, "f2": 0.0})
    assert np.all(apply_generator(model, const, np.linspace(0, 3, 7)).value == 0)


def test_layer_truncation_error_is_bounded():
    model = build_model("doering_barczy", {"mu": "power"}).model
    f = cos_function()
    x = np.linspace(0.1, 2.0, 5)
    full = apply_generator(model, f, x).value
    for n in (4, 10, 20):
        part = apply_generator(model, f, x, n0=n)
        assert np.all(np.abs(part.value - full) <= part.error_bound + 1e-10)


def test_zero_model_martingale_is_exactly_zero():
    rep = martingale_residual(model_custom().model, TruncationParams(h=0.25), cos_function(), 0.3, 1.0, 20, 0)
    assert rep.mean == 0 and rep.se == 0 and rep.passed


def test_martingale_residual_on_bounded_jumps():
    model = build_model("bounded_jump").model
    rep = martingale_residual(model, TruncationParams(n0=2, h=2.0 ** -7), cos_function(), 0.3, 1.0, 3000, 4)
    assert rep.passed, rep.as_dict()
    assert set(rep.as_dict()) >= {"mean", "se", "pass"}


def test_martingale_needs_two_paths():
    with pytest.raises(ValueError):
        martingale_residual(model_custom().model, TruncationParams(), cos_function(), 0.0, 1.0, 1, 0)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(-1e-3, 1e-3))
def test_second_difference_is_accurate_for_small_jumps(x, g):
    f = cos_function()
    # Taylor series to fifth order as an independent oracle
    exact = (-math.cos(x) * g ** 2 / 2 + math.sin(x) * g ** 3 / 6 + math.cos(x) * g ** 4 / 24
             - math.sin(x) * g ** 5 / 120)
    assert float(second_difference(f, x, g)) == pytest.approx(exact, rel=1e-9, abs=1e-22)


def test_second_difference_matches_direct_form_for_large_jumps():
    f = gaussian_bump(1.0)
    x, g = np.array([0.3, -1.0]), np.array([0.5, -2.0])
    assert np.allclose(second_difference(f, x, g), f.f(x + g) - f.f(x) - f.f_prime(x) * g, atol=0)
