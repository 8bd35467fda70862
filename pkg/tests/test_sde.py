import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jumpsde.measures import empty_measure
from jumpsde.models import build_model, model_custom
from jumpsde.noise import generate
from jumpsde.sde import (
    ModelSpec,
    SimulationError,
    TruncationParams,
    chi,
    moment_check,
    simulate,
    simulate_ensemble,
    simulate_paths,
    uniqueness_experiment,
    validate_model,
)


def zero_model():
    return model_custom().model


def test_chi_examples():
    assert chi(3, 5) == 3
    assert chi(3, -5) == -3
    assert chi(3, 1.5) == 1.5
    with pytest.raises(ValueError):
        chi(0.5, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(1.0, 100.0), st.floats(-1e3, 1e3))
def test_chi_is_idempotent_projection(m, x):
    y = chi(m, x)
    assert abs(y) <= m
    assert chi(m, y) == y
    if abs(x) <= m:
        assert y == x


def test_truncation_params_validate():
    with pytest.raises(ValueError):
        TruncationParams(m=0.5)
    with pytest.raises(ValueError):
        TruncationParams(h=0.0)
    with pytest.raises(ValueError):
        TruncationParams(n0=-1)


def test_zero_model_keeps_initial_value():
    p = simulate_paths(zero_model(), TruncationParams(h=0.125), 0, 0.7, 2.0, 3)
    for path in p:
        assert np.all(path.values == 0.7) and np.all(path.left == 0.7)


def test_constant_drift_is_exact():
    model = build_model("constant_drift", {"b": 1.0}).model
    (p,) = simulate_paths(model, TruncationParams(h=2.0 ** -5), 0, 0.0, 3.0, 1)
    assert p.values[-1] == 3.0
    assert np.array_equal(p.values, p.times)


def test_interval_model_stays_in_unit_interval():
    model = build_model("bertoin_legall", {"nu": "uniform"}).model
    trunc = TruncationParams(n0=1, h=2.0 ** -6)
    for p in simulate_paths(model, trunc, 4, 0.3, 5.0, 200):
        assert p.values.min() >= 0.0 and p.values.max() <= 1.0
        assert p.left.min() >= 0.0 and p.left.max() <= 1.0
    assert len(p.events) > 0


def test_deterministic_model_has_zero_variance():
    model = build_model("constant_drift", {"b": 0.5}).model
    st_ = simulate_ensemble(model, TruncationParams(h=0.125), 0, 1.0, 1.0, 50)
    assert np.all(st_.var == 0)


def test_brownian_variance():
    model = build_model("brownian", {"sigma": 1.0}).model
    st_ = simulate_ensemble(model, TruncationParams(h=0.25), 11, 0.0, 1.0, 10000)
    v = st_.var[-1]
    se = v * math.sqrt(2.0 / (st_.n_paths - 1))
    assert abs(v - 1.0) <= 3 * se


def test_compensated_jump_mean_is_preserved():
    model = build_model("bounded_jump").model
    trunc = TruncationParams(n0=2, h=2.0 ** -6)
    st_ = simulate_ensemble(model, trunc, 3, 0.4, 1.0, 4000)
    assert np.all(np.abs(st_.mean - 0.4) <= 3 * st_.se + 1e-12)


def test_pure_jump_model_is_step_independent():
    model = build_model("bertoin_legall", {"nu": "point"}).model
    tab = uniqueness_experiment(model, TruncationParams(n0=1), 2, 0.5, 1.0, [2.0 ** -k for k in range(3, 8)])
    assert tab.differences == [0.0] * 4


def test_h_alpha_cauchy_sequence():
    model = build_model("h_alpha", {"alpha": 0.5, "lam": 1.0}).model
    tab = uniqueness_experiment(model, TruncationParams(n0=1), 0, 1.0, 1.0, [2.0 ** -k for k in range(4, 11)])
    d = tab.differences
    assert all(b <= a for a, b in zip(d, d[1:]))
    assert d[-1] < 1e-2


def test_uniqueness_is_reproducible():
    model = build_model("h_alpha").model
    levels = [2.0 ** -k for k in range(4, 8)]
    a = uniqueness_experiment(model, TruncationParams(n0=1), 9, 1.0, 1.0, levels)
    b = uniqueness_experiment(model, TruncationParams(n0=1), 9, 1.0, 1.0, levels)
    assert a.rows == b.rows


def test_uniqueness_rejects_non_halving_levels():
    with pytest.raises(ValueError):
        uniqueness_experiment(zero_model(), TruncationParams(), 0, 0.0, 1.0, [0.5, 0.2])


def test_paths_are_deterministic():
    model = build_model("doering_barczy", {"mu": "point"}).model
    trunc = TruncationParams(n0=1, h=2.0 ** -5)
    a = simulate_paths(model, trunc, 5, 1.0, 2.0, 5)
    b = simulate_paths(model, trunc, 5, 1.0, 2.0, 5)
    assert all(p.identical(q) for p, q in zip(a, b))


def test_ensemble_independent_of_threads():
    model = build_model("ou").model
    trunc = TruncationParams(h=2.0 ** -4)
    ref = simulate_ensemble(model, trunc, 1, 1.0, 1.0, 300, threads=1, chunk=64)
    for threads in (2, 3):
        other = simulate_ensemble(model, trunc, 1, 1.0, 1.0, 300, threads=threads, chunk=64)
        for name in ("mean", "var", "min", "max", "se"):
            assert np.array_equal(getattr(ref, name), getattr(other, name))
        assert ref.sup2_mean == other.sup2_mean


def test_ensemble_chunking_only_reorders_rounding():
    model = build_model("ou").model
    trunc = TruncationParams(h=2.0 ** -4)
    a = simulate_ensemble(model, trunc, 1, 1.0, 1.0, 300, chunk=300)
    b = simulate_ensemble(model, trunc, 1, 1.0, 1.0, 300, chunk=7)
    assert np.allclose(a.mean, b.mean, rtol=0, atol=1e-13)
    assert np.allclose(a.var, b.var, rtol=1e-12, atol=1e-14)
    assert np.array_equal(a.min, b.min) and np.array_equal(a.max, b.max)


def test_large_band_truncation_does_not_change_path():
    model = build_model("ou").model
    nz = generate(0, 1.0, 2.0 ** -6, model.mu0, 0, model.mu1, 0)
    a = simulate(model, TruncationParams(m=50.0, h=2.0 ** -6), nz, 0.5, 1.0)
    b = simulate(model, TruncationParams(m=1e6, h=2.0 ** -6), nz, 0.5, 1.0)
    assert np.max(np.abs(a.values)) < 50
    assert np.array_equal(a.values, b.values)


def test_tight_band_changes_coefficients():
    model = build_model("ou", {"theta": 1.0, "sigma": 0.0}).model
    (p,) = simulate_paths(model, TruncationParams(m=1.0, h=2.0 ** -6), 0, 4.0, 1.0, 1)
    # with the state clamped to 1 the drift is -1 until x falls inside the band
    assert p.values[-1] == pytest.approx(3.0, abs=1e-12)


def test_more_layers_reuse_existing_atoms():
    model = build_model("doering_barczy", {"mu": "power"}).model
    a = simulate(model, TruncationParams(n0=3), generate(0, 1.0, 2.0 ** -8, model.mu0, 3, model.mu1, 0), 1.0, 1.0)
    b = simulate(model, TruncationParams(n0=4), generate(0, 1.0, 2.0 ** -8, model.mu0, 4, model.mu1, 0), 1.0, 1.0)
    # every event time of the coarser truncation is still an event time
    assert set(a.times.tolist()) <= set(b.times.tolist())
    assert len(b.times) > len(a.times)


def test_positive_model_stays_nonnegative():
    model = build_model("doering_barczy", {"mu": "power"}).model
    for p in simulate_paths(model, TruncationParams(n0=6, h=2.0 ** -6), 8, 1.0, 3.0, 100):
        assert p.values.min() >= 0 and p.left.min() >= 0


def test_blow_up_raises_simulation_error():
    model = model_custom(b1={"family": "square", "scale": 1.0}).model
    with pytest.raises(SimulationError):
        simulate_paths(model, TruncationParams(h=0.25, clamp=False), 0, 10.0, 20.0, 1)


def test_moment_bound_examples():
    rep = moment_check(zero_model(), TruncationParams(h=0.25), 0, 0.0, 1.0, 10, 1.0)
    assert rep["estimate"] == 1.0 and rep["passed"]
    drift = build_model("constant_drift", {"b": 1.0}).model
    rep = moment_check(drift, TruncationParams(h=0.25), 0, 0.0, 1.0, 10, 1.0)
    assert rep["estimate"] == pytest.approx(2.0) and rep["bound"] == pytest.approx(math.exp(30.0))


def test_moment_check_refuses_wrong_growth_constant():
    model = build_model("ou", {"theta": 2.0}).model
    with pytest.raises(ValueError):
        moment_check(model, TruncationParams(h=0.25), 0, 0.0, 1.0, 10, 1.0)


def test_validate_model_flags_bad_nonnegative_model():
    bad = ModelSpec("bad", empty_measure(), empty_measure(), sigma=lambda x: np.ones_like(x), domain="nonnegative")
    assert any("sigma" in p for p in validate_model(bad))
    dec = ModelSpec("dec", empty_measure(), empty_measure(), b2=lambda x: -np.asarray(x, float))
    assert any("b2" in p for p in validate_model(dec))
