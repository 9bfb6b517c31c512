import numpy as np
import pytest
from sklearn.base import clone

from vcbart.config import GeometricSplitPrior, PolynomialSplitPrior
from vcbart.estimator import VCBartRegressor
from vcbart.exceptions import DataError


def simple_problem(seed=0, N=240):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((N, 2))
    z = rng.uniform(size=(N, 2))
    y = (1.0 + 2.0 * z[:, 0]) * x[:, 0] - x[:, 1] + \
        0.3 * rng.standard_normal(N)
    subjects = np.repeat(np.arange(N // 4), 4)
    return x, y, z, subjects


@pytest.fixture(scope="module")
def fitted_estimator():
    x, y, z, subjects = simple_problem()
    est = VCBartRegressor(n_trees=10, n_iter=150, n_burn=60, n_chains=1,
                          seed=5)
    est.fit(x, y, Z=z, subjects=subjects)
    return est, (x, y, z, subjects)


def test_params_round_trip_through_clone():
    est = VCBartRegressor(n_trees=7, rho=0.25, seed=11, split_gamma=0.3)
    params = est.get_params()
    assert params["n_trees"] == 7
    assert params["rho"] == 0.25
    twin = clone(est)
    assert twin.get_params() == params
    # set_params feeds back into the runtime configuration
    est.set_params(n_trees=9)
    assert est._hyperparameters().n_trees == 9


def test_split_prior_selection():
    assert isinstance(VCBartRegressor()._hyperparameters().split_prior,
                      PolynomialSplitPrior)
    geo = VCBartRegressor(split_gamma=0.4)._hyperparameters().split_prior
    assert isinstance(geo, GeometricSplitPrior)
    assert geo.gamma == 0.4


def test_fit_requires_modifiers():
    x, y, z, _ = simple_problem()
    with pytest.raises(DataError, match="modifier"):
        VCBartRegressor().fit(x, y)


def test_predict_requires_fit_and_modifiers(fitted_estimator):
    est, (x, _, z, _) = fitted_estimator
    with pytest.raises(DataError, match="not fitted"):
        VCBartRegressor().predict(x, Z=z)
    with pytest.raises(DataError, match="modifier"):
        est.predict(x)


def test_fit_predict_shapes_and_quality(fitted_estimator):
    est, (x, y, z, subjects) = fitted_estimator
    pred = est.predict(x, Z=z)
    assert pred.shape == (len(y),)
    assert np.all(np.isfinite(pred))
    r2 = est.score(x, y, Z=z)
    assert r2 > 0.7  # strong signal, weak noise
    assert est.n_features_in_ == 2
    assert est.n_modifiers_in_ == 2


def test_prediction_intervals_nest(fitted_estimator):
    est, (x, _, z, _) = fitted_estimator
    narrow = est.predict_interval(x[:5], z[:5], level=0.5)
    wide = est.predict_interval(x[:5], z[:5], level=0.95)
    assert np.all(wide.lower <= narrow.lower)
    assert np.all(narrow.upper <= wide.upper)
    assert np.all(narrow.lower <= narrow.upper)


def test_coefficient_surfaces(fitted_estimator):
    est, _ = fitted_estimator
    grid = np.column_stack([np.linspace(0, 1, 9), np.full(9, 0.5)])
    coefs = est.coefficients(grid)
    assert coefs.shape == (9, 3)
    # the first slope rises roughly from 1 to 3 along the first modifier
    assert coefs[-1, 1] - coefs[0, 1] > 0.8
    summ = est.coefficient_summary(1, grid)
    np.testing.assert_allclose(summ.mean, coefs[:, 1], atol=1e-12)
    assert np.all(summ.lower <= summ.upper)


def test_selected_modifiers_are_sets(fitted_estimator):
    est, _ = fitted_estimator
    assert est.selection_probabilities_.shape == (3, 2)
    for j in range(3):
        sel = est.selected_modifiers(j)
        assert isinstance(sel, set)
        assert sel <= {0, 1}
    # the varying slope depends on the first modifier and strongly so
    assert 0 in est.selected_modifiers(1)


def test_refit_with_same_seed_is_reproducible():
    x, y, z, subjects = simple_problem(seed=3, N=60)
    kw = dict(n_trees=5, n_iter=60, n_burn=20, n_chains=1, seed=9)
    a = VCBartRegressor(**kw).fit(x, y, Z=z, subjects=subjects)
    b = VCBartRegressor(**kw).fit(x, y, Z=z, subjects=subjects)
    np.testing.assert_array_equal(a.predict(x, Z=z), b.predict(x, Z=z))
    np.testing.assert_array_equal(a.draws_.sigmas(), b.draws_.sigmas())


def test_score_on_constant_response_is_zero():
    x, _, z, subjects = simple_problem(seed=4, N=40)
    est = VCBartRegressor(n_trees=4, n_iter=40, n_burn=10, n_chains=1, seed=2)
    rng = np.random.default_rng(0)
    y = 1.0 + 0.01 * rng.standard_normal(40)
    est.fit(x, y, Z=z, subjects=subjects)
    const = np.full(8, 2.0)
    assert est.score(x[:8], const, Z=z[:8]) == 0.0
