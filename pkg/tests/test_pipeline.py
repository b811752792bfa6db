import json

import numpy as np
import pytest

from vmincqr.errors import InvalidConfig
from vmincqr.pipeline import FitOptions, FittedMethod, derive_seed, fit_method, parse_method


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((80, 12))
    y = 500 + 10 * X[:, 0] - 6 * X[:, 1] + rng.standard_normal(80)
    return X, y, [f"f{j}" for j in range(12)]


def test_parse_method():
    assert parse_method("GP") == ("gp", "gp")
    assert parse_method("cqr-mlp") == ("cqr", "mlp")
    with pytest.raises(InvalidConfig):
        parse_method("cqr-svm")


def test_derive_seed_stable_and_distinct():
    assert derive_seed(0, "gp", 1) == derive_seed(0, "gp", 1)
    assert derive_seed(0, "gp", 1) != derive_seed(0, "gp", 2)


def test_k_from_training_holdout_is_deterministic(data):
    X, y, names = data
    a = fit_method("cqr-linear", X, y, names, options=FitOptions(k_max=6), seed=3)
    b = fit_method("cqr-linear", X, y, names, options=FitOptions(k_max=6), seed=3)
    assert a.k_scores == b.k_scores and len(a.k_scores) == 6
    assert len(a.selected) == min(a.k_scores, key=a.k_scores.get)
    assert np.array_equal(a.selected, b.selected)


def test_holdout_off_uses_k_max(data):
    X, y, names = data
    fm = fit_method("cp-linear", X, y, names, options=FitOptions(k_max=4, select_holdout=0.0))
    assert len(fm.selected) == 4 and fm.k_scores == {}
    with pytest.raises(InvalidConfig):
        fit_method("cp-linear", X, y, names, options=FitOptions(select_holdout=1.0))


def test_explicit_selection_rows(data):
    X, y, names = data
    fm = fit_method("qr-linear", X[:60], y[:60], names, X_select=X[60:], y_select=y[60:],
                    options=FitOptions(k_max=5))
    assert sorted(fm.k_scores) == [1, 2, 3, 4, 5]


def test_bundle_round_trip_and_method_switch(data):
    X, y, names = data
    fm = fit_method("qr-linear", X, y, names, k=3, target=(0, 25))
    back = FittedMethod.from_dict(json.loads(json.dumps(fm.to_dict())))
    a, b = fm.intervals(X), back.intervals(X)
    np.testing.assert_array_equal(a.lower, b.lower)
    cqr = fm.as_method("cqr-linear")
    assert cqr.needs_calibration and not fm.needs_calibration
    with pytest.raises(InvalidConfig):
        fm.as_method("cp-linear")
