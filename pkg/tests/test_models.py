import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate as spi

from jumpsde.measures import integrate
from jumpsde.models import (
    MODEL_NAMES,
    build_model,
    counterexample_phi,
    db_kernel,
    h_alpha,
    ode_residual,
    q_kernel,
    y1,
    y2,
    y2_prime,
)


def test_h_alpha_values():
    assert float(h_alpha(4.0, 0.5)) == pytest.approx(4.0)
    assert np.allclose(h_alpha(np.array([0.25, 1.0, 9.0]), 0.5), 2 * np.sqrt([0.25, 1.0, 9.0]))
    assert float(h_alpha(-3.0, 0.5)) == 0.0


def test_power_solution_derivative():
    # x2(t) = t^2 for alpha = 1/2; x2'(3) = 6 = h(9)
    assert float(h_alpha(9.0, 0.5)) == pytest.approx(6.0)


def test_second_solution_branches():
    assert float(y2(0.5, 0.5)) == pytest.approx(0.75)
    assert float(y2_prime(0.5, 0.5)) == pytest.approx(-1.0)
    assert float(counterexample_phi(0.75, 0.5)) == pytest.approx(1.0)
    t_end = 2 ** 0.5
    assert float(y2(t_end, 0.5)) == 0.0
    assert np.all(y2(np.linspace(t_end, 5, 20), 0.5) == 0.0)


def test_two_solutions_separate_by_one():
    t = np.linspace(0, 3, 30001)
    gap = np.abs(y1(t) - y2(t, 0.5))
    assert gap.max() == pytest.approx(1.0)
    assert float(y1(0.0)) == float(y2(0.0, 0.5)) == 1.0
    assert abs(y1(2 ** 0.5) - y2(2 ** 0.5, 0.5)) == 1.0


def test_ode_residuals_of_declared_solutions():
    for name in ("h_alpha", "counterexample"):
        facts = build_model(name).facts
        for sol in facts.ode_solutions:
            grid = np.linspace(0.0, 3.0, 3001)
            away = np.ones_like(grid, dtype=bool)
            for k in sol.kinks:
                away &= np.abs(grid - k) > 1e-3
            analytic = ode_residual(sol.phi, sol.y, grid[away], sol.sign, sol.y_prime)
            numeric = ode_residual(sol.phi, sol.y, grid[away & (grid > 1e-3)], sol.sign)
            assert analytic <= 1e-6, sol.name
            assert numeric <= 1e-5, sol.name


def test_constant_solution_residual_is_zero():
    phi = lambda x: counterexample_phi(x, 0.5)  # noqa: E731
    assert ode_residual(phi, y1, np.linspace(0, 3, 100), 1, lambda t: np.zeros_like(t)) == 0.0


def test_ode_residual_rejects_bad_sign():
    with pytest.raises(ValueError):
        ode_residual(np.abs, y1, [0.0], sign=0)


def test_interval_jump_update():
    x, z, r = 0.4, 0.5, 0.3
    assert x + z * float(q_kernel(x, r)) == pytest.approx(0.7)


def test_interval_kernel_vanishes_outside():
    r = np.linspace(0, 1, 11)
    assert np.all(q_kernel(np.full_like(r, -0.5), r)[r > 0] == 0)
    assert np.all(q_kernel(np.zeros_like(r), r)[r > 0] == 0)
    assert np.all(q_kernel(np.ones_like(r), r) == 0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_interval_update_stays_in_unit_interval(x, z, r):
    v = x + z * float(q_kernel(x, r))
    assert 0.0 <= v <= 1.0


def test_interval_identity_point_mass():
    built = build_model("bertoin_legall", {"nu": "point", "z": 0.5, "weight": 1.0})
    chk = built.facts.identity_checks[0]
    assert chk.closed_form(0.3, 0.7) == pytest.approx(0.06)
    assert chk.quadrature(0.3, 0.7) == pytest.approx(0.06, abs=1e-10)


def test_positive_branching_jump_updates():
    u = math.log(2.0)
    assert 2 + float(db_kernel(2.0, u, 0.4)) == pytest.approx(1.0)
    assert 2 + float(db_kernel(2.0, u, 0.6)) == 2.0


def test_positive_branching_identity_point_mass():
    built = build_model("doering_barczy", {"mu": "point"})
    chk = built.facts.identity_checks[0]
    assert chk.closed_form(1.0, 2.0) == pytest.approx(0.25)
    assert chk.quadrature(1.0, 2.0) == pytest.approx(0.25, abs=1e-10)


@pytest.mark.parametrize("name,params", [
    ("bertoin_legall", {"nu": "uniform"}),
    ("bertoin_legall", {"nu": "power"}),
    ("doering_barczy", {"mu": "power"}),
    ("doering_barczy", {"mu": "exponential"}),
])
def test_identity_checks_agree(name, params):
    built = build_model(name, params)
    rng = np.random.default_rng(0)
    for chk in built.facts.identity_checks:
        for _ in range(5):
            x, y = rng.uniform(0.05, 1.0, 2)
            args = (x, y) if chk.closed_form.__code__.co_argcount == 2 else (x,)
            assert chk.closed_form(*args) == pytest.approx(chk.quadrature(*args), abs=1e-8)


def test_interval_jump_law_matches_nested_quadrature():
    built = build_model("bertoin_legall", {"nu": "uniform"})
    model = built.model
    f = np.cos
    x = 0.3
    sizes, w = model.jump_law0(np.array([x]), 1)
    via_law = float(np.sum(w * (f(x + sizes) - f(x))))
    # r <= x moves towards 1 with probability x, otherwise towards 0
    up, _ = spi.quad(lambda z: f(x + z * (1 - x)) - f(x), 0, 1)
    down, _ = spi.quad(lambda z: f(x - z * x) - f(x), 0, 1)
    assert via_law == pytest.approx(x * up + (1 - x) * down, abs=1e-12)


def test_positive_branching_compensator_matches_quadrature():
    built = build_model("doering_barczy", {"mu": "point"})
    model = built.model
    for x in (0.1, 0.5, 2.0):
        sizes, w = model.jump_law0(np.array([x]), 1)
        assert float(np.sum(w * sizes)) == pytest.approx(float(model.compensator0(np.array([x]), 1)[0]), abs=1e-12)


def test_h_alpha_compensator_matches_integral():
    built = build_model("h_alpha", {"alpha": 0.5, "lam": 2.0})
    model = built.model
    x = np.array([0.0, 0.5, 4.0])
    direct = integrate(model.mu0, lambda u: model.g0(x[None, :], u[:, None, :]), 1)
    assert np.allclose(model.compensator0(x, 1), direct)


def test_divergent_measures_are_flagged():
    with pytest.raises(ValueError, match="diverge"):
        build_model("doering_barczy", {"mu": "power", "alpha": 1.5})
    with pytest.raises(ValueError, match="diverge"):
        build_model("bertoin_legall", {"nu": "power", "beta": 2.0})


def test_registry_builds_every_model():
    for name in MODEL_NAMES:
        built = build_model(name)
        assert built.model.name == name


def test_unknown_model_name():
    with pytest.raises(ValueError):
        build_model("heston")


def test_custom_model_from_config():
    built = build_model("custom", {
        "sigma": {"family": "constant", "value": 0.5},
        "b1": {"family": "affine", "slope": -1.0},
        "g0": {"family": "mark_times", "coef": {"family": "cos"}},
        "mu0": {"family": "point_masses", "points": [0.3], "weights": [2.0]},
    })
    m = built.model
    assert float(m.b(np.array([2.0]))[0]) == -2.0
    assert float(m.g0(np.array(0.0), np.array([[0.3]]))[0]) == pytest.approx(0.3)


def test_custom_model_rejects_unknown_family():
    with pytest.raises(ValueError):
        build_model("custom", {"b1": {"family": "exp"}})


def test_counterexample_phi_shape():
    x = np.linspace(-1, 2, 301)
    v = counterexample_phi(x, 0.5)
    assert np.all(v >= 0)
    assert np.all(v[(x < 0) | (x > 1)] == 0)
    assert float(counterexample_phi(0.5, 0.5)) == pytest.approx(2 * math.sqrt(0.5))
