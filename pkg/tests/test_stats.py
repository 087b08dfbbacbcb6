import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats as sps

from incidentlab import stats
from incidentlab.errors import InputError
from incidentlab.stats import Ecdf, density_export, pairwise_wasserstein, summarize, wasserstein1

from oracles import w1_cosorted

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def samples(max_size=64):
    return arrays(np.float64, st.integers(1, max_size), elements=finite)


def test_summarize_degenerate():
    s = summarize([5, 5, 5])
    assert (s.mean, s.std, s.min, s.q25, s.median, s.q75, s.max) == (5, 0, 5, 5, 5, 5, 5)


def test_summarize_hand_interpolation():
    s = summarize([1, 2, 3, 4])
    assert (s.median, s.q25, s.q75) == (2.5, 1.75, 3.25)
    assert s.std == pytest.approx(np.sqrt(5 / 3))


def test_summarize_empty():
    with pytest.raises(InputError):
        summarize([])


@given(samples())
def test_summary_ordering(x):
    s = summarize(x)
    assert s.min <= s.q25 <= s.median <= s.q75 <= s.max
    assert s.std >= 0 and s.count == x.size


def test_ecdf_definition():
    F = Ecdf([3, 1, 2])
    assert list(F.sorted_samples) == [1, 2, 3]
    assert F(2) == pytest.approx(2 / 3)
    assert F(1 - 1e-9) == 0 and F(3) == 1
    assert Ecdf([1, 1, 2])(1) == pytest.approx(2 / 3)


def test_ecdf_errors():
    with pytest.raises(InputError):
        Ecdf([])
    with pytest.raises(InputError):
        Ecdf([1.0, np.nan])


def test_w1_examples():
    assert wasserstein1([0, 1], [0, 2]) == 0.5
    a = np.array([3.0, 1.0, 4.0])
    assert wasserstein1(a, a) == 0.0
    assert wasserstein1(a, a + 2.5) == pytest.approx(2.5, abs=1e-12)


@given(st.integers(1, 64).flatmap(lambda n: st.tuples(
    arrays(np.float64, n, elements=finite), arrays(np.float64, n, elements=finite))))
@settings(max_examples=200)
def test_w1_matches_cosorted_oracle(pair):
    a, b = pair
    assert wasserstein1(a, b) == pytest.approx(w1_cosorted(a, b), abs=1e-9, rel=1e-12)


@given(samples(), samples())
@settings(max_examples=100)
def test_w1_unequal_sizes_match_scipy(a, b):
    assert wasserstein1(a, b) == pytest.approx(sps.wasserstein_distance(a, b), abs=1e-9, rel=1e-9)


@given(samples(), samples(), samples())
@settings(max_examples=100)
def test_w1_metric_axioms(a, b, c):
    ab, ba = wasserstein1(a, b), wasserstein1(b, a)
    assert ab == ba and ab >= 0
    assert wasserstein1(a, a) == 0
    assert wasserstein1(a, c) <= ab + wasserstein1(b, c) + 1e-9


def test_pairwise_identical_groups():
    d = np.tile(np.arange(40.0), 2)
    wm = pairwise_wasserstein(d, ["a"] * 40 + ["b"] * 40)
    assert wm.dist[0, 1] == 0


def test_pairwise_structure_and_ordering():
    g = np.random.default_rng(0)
    base = g.lognormal(3, 0.5, 3000)
    d = np.concatenate([base[:1000], base[1000:2000], 2.0 * base[2000:]])
    cats = ["g1"] * 1000 + ["g2"] * 1000 + ["g3"] * 1000
    wm = pairwise_wasserstein(d, cats)
    assert wm.labels == ["g1", "g2", "g3"]
    assert np.array_equal(wm.dist, wm.dist.T) and not wm.dist.diagonal().any()
    assert wm.dist[0, 1] * 5 < wm.dist[0, 2]
    assert stats.is_metric(wm.dist)


def test_pairwise_small_groups_excluded():
    d = np.arange(100.0)
    wm = pairwise_wasserstein(d, ["a"] * 45 + ["b"] * 45 + ["c"] * 10)
    assert wm.labels == ["a", "b"] and wm.excluded == ["c"]
    with pytest.raises(InputError):
        pairwise_wasserstein(d, ["a"] * 90 + ["c"] * 10)


def test_pairwise_numeric_labels_sort_numerically():
    d = np.arange(120.0)
    wm = pairwise_wasserstein(d, [str(h) for h in np.repeat([10, 2, 1], 40)])
    assert wm.labels == ["1", "2", "10"]


def test_matrix_csv_round_trip(tmp_path):
    d = np.arange(90.0)
    wm = pairwise_wasserstein(d, ["x"] * 30 + ["y"] * 30 + ["z"] * 30)
    wm.to_csv(tmp_path / "w.csv")
    back = stats.WassersteinMatrix.from_csv(tmp_path / "w.csv")
    assert back.labels == wm.labels and np.array_equal(back.dist, wm.dist)


def test_density_uniform():
    x = np.random.default_rng(1).uniform(0, 10, 10_000)
    x[0] = 10.0
    t = density_export(x, ["u"] * x.size, bins=10)
    assert np.allclose(t.density[0], 0.1, rtol=0.1)


def test_density_normalized_per_category():
    g = np.random.default_rng(2)
    d = np.concatenate([g.lognormal(3, 0.6, 700), g.lognormal(3.5, 0.6, 300)])
    cats = ["Breakdown"] * 700 + ["Crash"] * 300
    t = density_export(d, cats, bins=40)
    widths = np.diff(t.edges)
    for row in t.density:
        assert abs((row * widths).sum() - 1) < 1e-9
    centers = (t.edges[:-1] + t.edges[1:]) / 2
    means = (t.density * widths * centers).sum(axis=1)
    assert means[1] > means[0]
    assert t.edges[0] == 0 and t.edges[-1] == d.max()


def test_density_csv(tmp_path):
    t = density_export([1.0, 2.0, 3.0], ["a", "a", "b"], bins=2)
    t.to_csv(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "bin_left,bin_right,category,density"
    assert len(lines) == 1 + 2 * 2


def test_density_bins_validated():
    with pytest.raises(InputError):
        density_export([1.0], ["a"], bins=1)
