import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from raid.estimators import PPMxOrdinalClassifier, PPMxRegressor, RAIDInteractionDetector
from raid.simgen import gen_ordinal_latent, gen_toy

FAST = dict(n_iter=300, burn_in=150, thin=1)


def test_params_and_clone():
    est = PPMxRegressor(A=2.0, categorical_features=[0, 1], **FAST)
    params = est.get_params()
    assert params["A"] == 2.0 and params["n_iter"] == 300 and params["thin"] == 1
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(M=0.5)
    assert est.M == 0.5


def test_regressor_fit_predict():
    ds = gen_toy("f1", 200, seed=0)
    est = PPMxRegressor(categorical_features=[0, 1, 2], **FAST).fit(ds.X, ds.y)
    grid = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 1]], float)
    pred = est.predict(grid)
    # cell means 4, 2 and 0 on the original response scale
    np.testing.assert_allclose(pred, [4.0, 2.0, 0.0], atol=0.6)
    draws = est.sample_predictive(grid[:1], n_draws=200, random_state=1)
    assert draws.shape == (1, 200) and abs(draws.mean() - 4.0) < 0.6
    assert est.n_features_in_ == 3 and est.n_clusters_mean_ >= 1
    assert np.isfinite(est.lpml_)
    assert est.score(ds.X, ds.y) > 0.5


def test_unseen_level_and_width_checks():
    ds = gen_toy("f0", 80, seed=1)
    est = PPMxRegressor(categorical_features=[0, 1, 2], **FAST).fit(ds.X, ds.y)
    with pytest.raises(ValueError):
        est.predict(np.array([[2.0, 0, 0]]))
    with pytest.raises(ValueError):
        est.predict(np.zeros((1, 2)))


def test_not_fitted():
    with pytest.raises(NotFittedError):
        PPMxRegressor().predict(np.zeros((1, 3)))


def test_ordinal_classifier():
    ds = gen_ordinal_latent(150, seed=2)
    est = PPMxOrdinalClassifier(categorical_features=[0, 1, 2, 3], **FAST).fit(ds.X, ds.y)
    X = np.array([[1, 1, 0, 0, 0.0, 0.0], [0, 0, 0, 0, 0.0, 0.0]])
    proba = est.predict_proba(X)
    assert proba.shape == (2, 5)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    assert est.predict(X)[0] == 4
    assert est.predict(X)[1] in (1, 2)


def test_interaction_detector():
    ds = gen_toy("f1", 200, seed=3)
    det = RAIDInteractionDetector(categorical_features=[0, 1, 2], n_perm=99, p_cut=0.05, **FAST)
    det.fit(ds.X, ds.y)
    assert ("X1", "X2") in det.candidates_
    assert ("X1", "X2") in det.interactions_
    assert det.pair_summaries_[0].pair == ("X1", "X2")
