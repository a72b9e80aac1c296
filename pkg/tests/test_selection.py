import numpy as np
import pytest

from factories import small_table
from shapfs.gbdt import HyperParams
from shapfs.model_selection import MetricsReport, cross_val_bacc, evaluate_labels
from shapfs.pipeline import fit_encoded, prepare_split, seeded
from shapfs.resampling import SmoteConfig
from shapfs.seeding import stage_seed
from shapfs.selection import (CV_PROTOCOL, PAPER_PROTOCOL, SweepPoint, best_n, select_features, sweep,
                              write_curve_csv)
from shapfs.tabular import fit_encoder
from shapfs.treeshap import FeatureRanking

R0 = MetricsReport(0, 0, 0, 0, 0, 0)


def ranking(order, scores=None, names=None):
    names = names or [f"f{i}" for i in order]
    scores = scores or [float(len(order) - r) for r in range(len(order))]
    return FeatureRanking(tuple(names), tuple(order), tuple(scores))


def test_best_n_smallest_on_ties():
    curve = [SweepPoint(n, b, R0) for n, b in [(2, 0.7), (3, 0.9), (4, 0.9), (5, 0.85), (6, 0.9)]]
    assert best_n(curve) == 3


def test_select_identity_at_total():
    r = ranking([2, 0, 1])
    assert select_features(r, 3) == [0, 1, 2]


def test_select_returns_top_n_sorted():
    r = ranking([4, 1, 3, 0, 2])
    assert select_features(r, 2) == [1, 4]


def test_zero_score_tail_excluded():
    r = ranking([0, 1, 2, 3], scores=[0.5, 0.2, 0.0, 0.0])
    assert select_features(r, 2) == [0, 1]


def test_select_out_of_range():
    r = ranking([0, 1, 2])
    with pytest.raises(ValueError):
        select_features(r, 1)
    with pytest.raises(ValueError):
        select_features(r, 4)


def test_aggregate_onehot_group():
    t = small_table({"x": [1.0, 2.0]}, {"c": ["a", "b"], "d": ["u", "v"]})
    enc = fit_encoder(t)
    assert enc.encoded_names == ("x", "c=a", "c=b", "d=u", "d=v")
    r = ranking([1, 2, 0, 3, 4])
    assert select_features(r, 2, enc, aggregate=True) == [1, 2]
    assert select_features(ranking([1, 0, 2, 3, 4]), 2, enc, aggregate=True) == [0, 1, 2]
    with pytest.raises(ValueError):
        select_features(r, 2, aggregate=True)


def _data(seed=0, n=150):
    rng = np.random.default_rng(seed)
    y = np.array([1] * (n // 3) + [0] * (n - n // 3))
    cols = {f"x{j}": list(rng.normal(size=n) + (1.5 * y if j < 2 else 0)) for j in range(4)}
    tr = np.arange(n) % 5 != 0
    t = small_table(cols, label=[str(v) for v in y])
    return t.take(np.flatnonzero(tr)), y[tr], t.take(np.flatnonzero(~tr)), y[~tr]


HP = HyperParams(n_estimators=15, max_depth=3)


def test_holdout_sweep_full_n_matches_full_model():
    tr, ytr, te, yte = _data()
    r = ranking([3, 0, 2, 1])
    res = sweep(tr, ytr, te, yte, r, HP, 3, SmoteConfig(), seed=7, mode=PAPER_PROTOCOL)
    assert [p.n for p in res.curve] == [2, 3, 4]
    prep = prepare_split(tr, te, 3)
    hp_s, sm_s = seeded(HP, SmoteConfig(), stage_seed(7, "model", "final"), stage_seed(7, "smote", "final"))
    full = fit_encoded(prep.X_fit, ytr, hp_s, sm_s, prep.encoder.encoded_names)
    assert res.point(4).bacc == evaluate_labels(yte, full.predict_label(prep.X_eval)).bacc


def test_cv_sweep_full_n_matches_cv():
    tr, ytr, te, yte = _data(1)
    r = ranking([1, 0, 3, 2])
    res = sweep(tr, ytr, None, None, r, HP, 3, SmoteConfig(), seed=2, mode=CV_PROTOCOL)
    assert res.point(4).bacc == cross_val_bacc(tr, ytr, HP, 3, SmoteConfig(), 2).mean_bacc
    assert res.best_n == best_n(res.curve)
    assert res.selected_names == r.names[: res.best_n]


def test_sweep_errors():
    tr, ytr, te, yte = _data()
    with pytest.raises(ValueError):
        sweep(tr, ytr, te, yte, ranking([]), HP, 3, SmoteConfig(), 0)
    with pytest.raises(ValueError):
        sweep(tr, ytr, te, yte, ranking([0, 1, 2, 3]), HP, 3, SmoteConfig(), 0, n_values=[2, 5])
    with pytest.raises(ValueError):
        sweep(tr, ytr, None, None, ranking([0, 1, 2, 3]), HP, 3, SmoteConfig(), 0, mode=PAPER_PROTOCOL)
    with pytest.raises(ValueError):
        sweep(tr, ytr, te, yte, ranking([0, 1, 2, 3]), HP, 3, SmoteConfig(), 0, mode="other")


def test_curve_export(tmp_path):
    tr, ytr, te, yte = _data()
    res = sweep(tr, ytr, te, yte, ranking([0, 1, 2, 3]), HP, 3, SmoteConfig(), 0, mode=PAPER_PROTOCOL)
    write_curve_csv(tmp_path / "c.csv", res, "stamp")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "# stamp"
    assert lines[1] == "N,bacc,acc,precision,sensitivity,specificity,f1"
    assert [ln.split(",")[0] for ln in lines[2:]] == ["2", "3", "4"]
