"""Estimator facade with the usual fit/predict surface.

VCBartRegressor wires the panel container, sampler, and posterior
summaries into one object.  Modifiers ride along as a required Z argument
to fit and predict since they are a separate input block from the
covariates, not extra covariate columns.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .config import Hyperparameters, PolynomialSplitPrior, GeometricSplitPrior
from .data import PanelDataset
from .exceptions import DataError
from .posterior import (CoefficientSummary, PredictionResult, beta_summary,
                        coefficient_draws, median_probability_model, predict,
                        selection_probability_matrix)
from .sampler import fit_posterior


class VCBartRegressor(BaseEstimator, RegressorMixin):
    """Varying-coefficient regression with one tree ensemble per coefficient.

    Parameters mirror Hyperparameters; split_gamma switches the depth
    penalty to the geometric form when set.  Fitting requires the modifier
    matrix Z and optionally a subject label vector for correlated errors.
    """

    def __init__(self, n_trees: int = 50, jump_sd=None, sigma_df: float = 3.0,
                 rho: float = 0.0, n_iter: int = 1500, n_burn: int = 500,
                 n_chains: int = 2, seed=None, split_base: float = 0.95,
                 split_power: float = 2.0, split_gamma=None,
                 max_depth: int = 32, cutpoint_grid=None,
                 min_leaf_obs: int = 1, standardize_y: bool = True,
                 n_jobs: int = 1):
        self.n_trees = n_trees
        self.jump_sd = jump_sd
        self.sigma_df = sigma_df
        self.rho = rho
        self.n_iter = n_iter
        self.n_burn = n_burn
        self.n_chains = n_chains
        self.seed = seed
        self.split_base = split_base
        self.split_power = split_power
        self.split_gamma = split_gamma
        self.max_depth = max_depth
        self.cutpoint_grid = cutpoint_grid
        self.min_leaf_obs = min_leaf_obs
        self.standardize_y = standardize_y
        self.n_jobs = n_jobs

    def _hyperparameters(self) -> Hyperparameters:
        if self.split_gamma is not None:
            prior = GeometricSplitPrior(gamma=self.split_gamma)
        else:
            prior = PolynomialSplitPrior(base=self.split_base,
                                         power=self.split_power)
        return Hyperparameters(
            n_trees=self.n_trees, jump_sd=self.jump_sd,
            sigma_df=self.sigma_df, split_prior=prior, rho=self.rho,
            n_iter=self.n_iter, n_burn=self.n_burn, n_chains=self.n_chains,
            seed=self.seed, max_depth=self.max_depth,
            cutpoint_grid=self.cutpoint_grid, min_leaf_obs=self.min_leaf_obs)

    def fit(self, X, y, Z=None, subjects=None):
        if Z is None:
            raise DataError("fit requires the modifier matrix Z")
        data = PanelDataset.from_arrays(y, X, Z, subjects,
                                        standardize_y=self.standardize_y)
        self.hyperparameters_ = self._hyperparameters()
        self.draws_ = fit_posterior(data, self.hyperparameters_,
                                    n_jobs=self.n_jobs)
        self.n_features_in_ = data.n_covariates
        self.n_modifiers_in_ = data.n_modifiers
        self.selection_probabilities_ = selection_probability_matrix(self.draws_)
        return self

    def _check_fitted(self):
        if not hasattr(self, "draws_"):
            raise DataError("estimator is not fitted")

    def predict(self, X, Z=None, mode: str = "marginal",
                residual_history=None):
        self._check_fitted()
        if Z is None:
            raise DataError("predict requires the modifier matrix Z")
        return predict(self.draws_, X, Z, mode=mode,
                       residual_history=residual_history).mean

    def predict_interval(self, X, Z, level: float = 0.95,
                         mode: str = "marginal",
                         residual_history=None) -> PredictionResult:
        self._check_fitted()
        return predict(self.draws_, X, Z, mode=mode, level=level,
                       residual_history=residual_history)

    def coefficients(self, Z) -> np.ndarray:
        """(n_rows, p+1) posterior-mean coefficient surfaces at Z."""
        self._check_fitted()
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        out = np.empty((Z.shape[0], self.n_features_in_ + 1))
        for j in range(self.n_features_in_ + 1):
            out[:, j] = coefficient_draws(self.draws_, j, Z).mean(axis=0)
        return out

    def coefficient_summary(self, j: int, Z,
                            level: float = 0.95) -> CoefficientSummary:
        self._check_fitted()
        return beta_summary(self.draws_, j, Z, level=level)

    def selected_modifiers(self, j: int) -> set[int]:
        """Median-probability modifier set for coefficient j (zero-based)."""
        self._check_fitted()
        return median_probability_model(self.selection_probabilities_[j])

    def score(self, X, y, Z=None, subjects=None, sample_weight=None):
        """R^2 against the posterior predictive mean."""
        y = np.asarray(y, dtype=np.float64)
        pred = self.predict(X, Z)
        ss_res = float(((y - pred) ** 2).sum())
        ss_tot = float(((y - y.mean()) ** 2).sum())
        return 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
