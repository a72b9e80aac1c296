import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapfs.resampling import SmoteConfig, n_synthetic, nearest_minority_neighbors, smote, smote_sample
from shapfs.tabular import DataError


def test_two_point_minority_on_diagonal():
    X = np.array([[0.0, 0.0], [1.0, 1.0]] + [[5.0, 5.0]] * 6)
    y = np.array([1, 1] + [0] * 6)
    res = smote_sample(X, y, SmoteConfig(k_neighbors=1, seed=4))
    syn = res.X[len(X):]
    assert len(syn) == 4
    assert np.all(syn[:, 0] == syn[:, 1])
    assert np.all((syn >= 0) & (syn < 1))


def test_duplicated_minority_points_reproduce_the_point():
    X = np.array([[2.0, -1.0]] * 3 + [[0.0, 0.0]] * 7)
    y = np.array([1] * 3 + [0] * 7)
    Xr, yr = smote(X, y, SmoteConfig(k_neighbors=2, seed=1))
    assert np.all(Xr[10:] == [2.0, -1.0])
    assert (yr == 1).sum() == 7


def test_cohort_fold_counts():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(792, 3))
    y = np.array([0] * 591 + [1] * 201)
    Xr, yr = smote(X, y, SmoteConfig())
    assert (yr == 1).sum() == 591 and (yr == 0).sum() == 591


def test_target_formula():
    assert n_synthetic(201, 591, 1.0) == 390
    assert n_synthetic(201, 591, 0.5) == 95
    assert n_synthetic(400, 591, 0.5) == 0


def test_already_balanced_is_identity():
    X = np.arange(8.0).reshape(4, 2)
    y = np.array([0, 1, 0, 1])
    res = smote_sample(X, y, SmoteConfig())
    assert res.n_synthetic == 0 and np.array_equal(res.X, X)


def test_k_clamped_to_minority_minus_one():
    X = np.arange(20.0).reshape(10, 2)
    y = np.array([1] * 3 + [0] * 7)
    res = smote_sample(X, y, SmoteConfig(k_neighbors=5))
    assert res.k_used == 2


def test_minority_below_two_errors():
    X = np.zeros((5, 2))
    with pytest.raises(DataError):
        smote(X, np.array([1, 0, 0, 0, 0]), SmoteConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        SmoteConfig(k_neighbors=0)
    with pytest.raises(ValueError):
        SmoteConfig(target_ratio=1.5)


def test_neighbors_ties_by_index():
    M = np.array([[0.0], [1.0], [-1.0], [2.0]])
    nn = nearest_minority_neighbors(M, 2)
    assert nn[0].tolist() == [1, 2]


def test_round_robin_parents_and_determinism():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 3))
    y = np.array([1] * 7 + [0] * 33)
    a = smote_sample(X, y, SmoteConfig(seed=9))
    b = smote_sample(X, y, SmoteConfig(seed=9))
    assert np.array_equal(a.X, b.X)
    assert a.parents.tolist() == [i % 7 for i in range(26)]


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), n_min=st.integers(2, 15), n_maj=st.integers(2, 40),
       d=st.integers(1, 4), k=st.integers(1, 6), ratio=st.sampled_from([0.3, 0.5, 0.8, 1.0]))
def test_smote_properties(seed, n_min, n_maj, d, k, ratio):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n_min + n_maj, d)) * rng.uniform(0.1, 100)
    y = np.array([1] * n_min + [0] * n_maj)
    rng.shuffle(y)
    res = smote_sample(X, y, SmoteConfig(k, ratio, seed))
    mino = res.minority_label
    m = int((y == mino).sum())
    expected = max(0, int(np.ceil(ratio * (len(y) - m))) - m)
    assert res.n_synthetic == expected
    assert (res.y == mino).sum() == m + expected
    # originals untouched
    assert np.array_equal(res.X[: len(X)], X)
    syn = res.X[len(X):]
    seg = X[res.parents] + res.lambdas[:, None] * (X[res.neighbors] - X[res.parents])
    assert np.all(np.abs(syn - seg) <= 1e-12)
    assert np.all((res.lambdas >= 0) & (res.lambdas < 1))
    assert np.all(y[res.parents] == mino) and np.all(y[res.neighbors] == mino)
    if len(syn):
        orig = X[y == mino]
        assert np.all(syn.min(axis=0) >= orig.min(axis=0)) and np.all(syn.max(axis=0) <= orig.max(axis=0))
