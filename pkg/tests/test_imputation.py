import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factories import brute_force_knn, small_table
from shapfs.imputation import fit_table_imputer, knn_fit, knn_transform, masked_distances, mode_fit, mode_transform
from shapfs.tabular import DataError


def test_fit_stores_reference_rows():
    X = np.arange(10.0).reshape(5, 2)
    m = knn_fit(X, np.zeros_like(X, bool), 3)
    assert m.reference_values.shape == (5, 2)
    assert np.array_equal(m.reference_values, X)


def test_fit_does_not_mutate_input():
    X = np.array([[1.0, 2.0], [3.0, 4.0]])
    mask = np.array([[False, True], [False, False]])
    before = X.copy()
    knn_fit(X, mask, 1)
    assert np.array_equal(X, before)


def test_fit_k_above_rows_errors():
    X = np.zeros((30, 2))
    with pytest.raises(DataError):
        knn_fit(X, np.zeros_like(X, bool), 31)


def test_fit_all_missing_column_errors():
    X = np.zeros((3, 2))
    mask = np.zeros_like(X, bool)
    mask[:, 1] = True
    with pytest.raises(DataError, match="x1"):
        knn_fit(X, mask, 1)


def test_mean_of_two_neighbors():
    ref = np.array([[1.0, 2.0], [3.0, 2.0]])
    m = knn_fit(ref, np.zeros_like(ref, bool), 2)
    q = np.array([[2.0, np.nan]])
    out = knn_transform(m, q, np.array([[False, True]]))
    assert out[0, 1] == 2.0


def test_identical_reference_k1_copies_value():
    ref = np.array([[0.0, 5.0, 1.0], [2.0, 7.0, 3.0], [9.0, -1.0, 4.0]])
    m = knn_fit(ref, np.zeros_like(ref, bool), 1)
    q = np.array([[2.0, np.nan, 3.0]])
    assert knn_transform(m, q, np.array([[False, True, False]]))[0, 1] == 7.0


def test_masked_distance_formula():
    ref = np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]])
    m = knn_fit(ref, np.zeros_like(ref, bool), 1)
    q = np.array([[1.0, np.nan, 0.0]])
    d = masked_distances(m, q, np.array([[False, True, False]]))
    z = (ref - m.center) / m.scale
    zq = (np.array([1.0, 0.0, 0.0]) - m.center) / m.scale
    expected = np.sqrt(3 / 2 * ((zq[0] - z[:, 0]) ** 2 + (zq[2] - z[:, 2]) ** 2))
    np.testing.assert_allclose(d[0], expected, rtol=1e-15)


def test_no_overlap_is_infinite_and_falls_back_to_mean():
    ref = np.array([[1.0, np.nan], [3.0, np.nan], [np.nan, 10.0], [np.nan, 20.0]])
    mask = np.isnan(ref)
    m = knn_fit(ref, mask, 2)
    q = np.array([[np.nan, 12.0]])
    qm = np.array([[True, False]])
    assert np.all(np.isinf(masked_distances(m, q, qm)[0, :2]))
    # every donor for column 0 shares no coordinate with the query
    assert knn_transform(m, q, qm)[0, 0] == 2.0


def test_k_equals_n_reduces_to_column_means():
    rng = np.random.default_rng(0)
    ref = rng.normal(size=(7, 3))
    m = knn_fit(ref, np.zeros_like(ref, bool), 7)
    q = np.array([[np.nan, 0.3, np.nan]])
    out = knn_transform(m, q, np.isnan(q))
    np.testing.assert_allclose(out[0, [0, 2]], ref.mean(axis=0)[[0, 2]], rtol=1e-14)


def test_distance_ties_break_by_lower_index():
    ref = np.array([[1.0, 10.0], [1.0, 20.0], [1.0, 30.0]])
    m = knn_fit(ref, np.zeros_like(ref, bool), 1)
    q = np.array([[1.0, np.nan]])
    assert knn_transform(m, q, np.isnan(q))[0, 1] == 10.0


def test_standardized_distances_pinned():
    # raw Euclidean would pick row 0 (tiny offset on the wide column);
    # standardized distances pick row 1
    ref = np.array([[0.0, 1000.0, 5.0], [1.0, 0.0, 7.0], [1.0, 1000.0, 9.0], [0.0, 0.0, 11.0]])
    m = knn_fit(ref, np.zeros_like(ref, bool), 1)
    q = np.array([[0.9, 100.0, np.nan]])
    assert knn_transform(m, q, np.isnan(q))[0, 2] == 7.0


def test_fit_stats_population():
    X = np.array([[1.0, 2.0], [3.0, np.nan], [5.0, 6.0]])
    m = knn_fit(X, np.isnan(X), 1)
    np.testing.assert_allclose(m.center, [3.0, 4.0])
    np.testing.assert_allclose(m.scale, [np.sqrt(8 / 3), 2.0])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(1, 5))
def test_random_table_matches_brute_force(seed, k):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(20, 4)).round(1)
    mask = rng.random(X.shape) < 0.15
    if mask.all(axis=0).any():
        return
    m = knn_fit(X, mask, k)
    got = knn_transform(m, np.where(mask, np.nan, X), mask)
    want = brute_force_knn(X, mask, k, m.center, m.scale)
    assert np.array_equal(got, want)
    # observed cells pass through bit-identical; no missing left
    assert np.array_equal(got[~mask], X[~mask])
    assert np.isfinite(got).all()


def test_mode_fit_and_transform():
    t = small_table({"x": [1.0, 2.0, 3.0, 4.0]}, {"c": ["A", "A", "B", None]})
    model = mode_fit(t)
    assert model.modes["c"] == ("A", 2)
    out = mode_transform(model, t)
    assert out.data["c"].tolist() == ["A", "A", "B", "A"]
    assert not out.missing["c"].any()


def test_mode_tie_is_lexicographic():
    t = small_table({"x": [1.0, 2.0, 3.0]}, {"c": ["B", "A", None]})
    assert mode_fit(t).modes["c"][0] == "A"


def test_mode_identity_on_observed():
    t = small_table({"x": [1.0, 2.0]}, {"c": ["B", "A"]})
    out = mode_transform(mode_fit(t), t)
    assert out.data["c"].tolist() == ["B", "A"]


def test_mode_all_missing_errors():
    t = small_table({"x": [1.0, 2.0]}, {"c": [None, None]})
    with pytest.raises(DataError):
        mode_fit(t)


def test_table_imputer_leaves_no_missing():
    t = small_table({"x": [1.0, None, 3.0, 4.0], "y": [None, 2.0, 2.5, 1.0]}, {"c": ["A", None, "B", "B"]})
    imp = fit_table_imputer(t, 2)
    out = imp.transform(t)
    assert not out.has_missing()
    assert out.data["x"][0] == 1.0 and out.data["c"][1] == "B"
