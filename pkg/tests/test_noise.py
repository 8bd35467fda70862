import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from jumpsde.measures import empty_measure, point_masses, power_law, uniform_box
from jumpsde.noise import MAGIC, coarsen, dump, generate, load, stream

MU0 = power_law(1.5, lo=0.05, hi=2.0)
MU1 = point_masses([0.5, 1.5], [1.0, 0.5])


def make(seed=0, T=1.0, h=2.0 ** -6, n0=3, n1=2, path=0):
    return generate(seed, T, h, MU0, n0, MU1, n1, path_index=path)


def test_same_arguments_give_identical_realisations():
    assert make().identical(make())


def test_different_paths_differ():
    a, b = make(path=0), make(path=1)
    assert not np.array_equal(a.brownian_path, b.brownian_path)


def test_adding_a_layer_keeps_existing_atoms():
    a = make(n0=3)
    b = make(n0=4)
    keep = b.atoms0.restrict(3)
    assert np.array_equal(a.atoms0.times, keep.times)
    assert np.array_equal(a.atoms0.marks, keep.marks)
    assert np.array_equal(a.brownian_path, b.brownian_path)
    assert a.atoms1.times.tolist() == b.atoms1.times.tolist()


def test_stream_keys_are_independent_generators():
    x = stream(1, 2, 0, 0).random(4)
    assert np.array_equal(x, stream(1, 2, 0, 0).random(4))
    for other in (stream(1, 2, 0, 1), stream(1, 2, 1, 0), stream(1, 3, 0, 0), stream(2, 2, 0, 0)):
        assert not np.array_equal(x, other.random(4))


def test_brownian_endpoint_variance_matches_horizon():
    T = 2.0
    ends = np.array([generate(s, T, 0.25, empty_measure(), 0, empty_measure(), 0).brownian_path[-1]
                     for s in range(10000)])
    var = ends.var(ddof=1)
    # standard error of a Gaussian sample variance
    se = var * math.sqrt(2.0 / (ends.size - 1))
    assert abs(var - T) <= 3 * se


def test_brownian_increments_are_gaussian():
    nz = generate(5, 64.0, 2.0 ** -4, empty_measure(), 0, empty_measure(), 0)
    z = nz.brownian_increments / math.sqrt(2.0 ** -4)
    assert stats.kstest(z, "norm").pvalue > 1e-3


def test_per_layer_counts_are_poisson():
    m = uniform_box(0.0, 1.0, total_mass=1.5)
    T = 2.0
    counts = np.array([len(generate(s, T, 1.0, m, 1, empty_measure(), 0).atoms0) for s in range(10000)])
    lam = 1.5 * T
    top = 10
    observed = np.bincount(np.minimum(counts, top), minlength=top + 1)
    probs = stats.poisson.pmf(np.arange(top), lam)
    probs = np.append(probs, 1.0 - probs.sum())
    res = stats.chisquare(observed, probs * counts.size)
    assert res.pvalue > 1e-3


def test_coarsen_by_one_is_identity():
    nz = make()
    assert coarsen(nz, 1).identical(nz)


def test_coarsen_telescopes_exactly():
    nz = make(h=2.0 ** -8)
    c = coarsen(nz, 4)
    assert c.brownian_path[-1] == nz.brownian_path[-1]
    fine = nz.brownian_path
    assert np.array_equal(c.brownian_increments, fine[4::4] - fine[:-4:4])
    assert c.atoms0 is nz.atoms0 and c.atoms1 is nz.atoms1


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32), st.sampled_from([1, 2, 4]), st.sampled_from([1, 2, 4, 8]))
def test_coarsen_composes(seed, a, b):
    nz = generate(seed, 1.0, 2.0 ** -6, MU0, 2, MU1, 1)
    assert coarsen(coarsen(nz, a), b).identical(coarsen(nz, a * b))


def test_coarsen_rejects_bad_factors():
    nz = make(h=2.0 ** -3)
    with pytest.raises(ValueError):
        coarsen(nz, 3)
    with pytest.raises(ValueError):
        coarsen(nz, 16)


def test_dump_round_trip(tmp_path):
    nz = make()
    f = tmp_path / "noise.bin"
    dump(nz, f)
    assert f.read_bytes().startswith(MAGIC)
    assert load(f).identical(nz)


def test_load_rejects_foreign_file(tmp_path):
    f = tmp_path / "x.bin"
    f.write_bytes(b"not a dump")
    with pytest.raises(ValueError):
        load(f)


def test_brownian_at_interpolates_grid_values():
    nz = make()
    t = np.arange(nz.n_steps + 1) * nz.finest_step
    assert np.array_equal(nz.brownian_at(t), nz.brownian_path)


def test_generate_rejects_bad_arguments():
    with pytest.raises(ValueError):
        generate(0, -1.0, 0.1, MU0, 1, MU1, 1)
    with pytest.raises(ValueError):
        generate(-1, 1.0, 0.1, MU0, 1, MU1, 1)
