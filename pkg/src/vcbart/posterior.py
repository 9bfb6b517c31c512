"""Posterior summaries: coefficient surfaces, predictions, modifier selection.

Everything here is a read-only reduction over stored draws.  Coefficient
evaluations are de-standardized to the original outcome scale: the intercept
surface gains the training mean, every surface is multiplied by the training
standard deviation, and modifier inputs are taken raw and passed through the
stored min-max map (clamping, with a warning, when they fall outside it).

Intervals are equal-tailed empirical quantiles with linear interpolation
between order statistics (numpy's default), at level 1 - alpha.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import DataError
from .draws import PosteriorDraws

_MIN_DRAWS_FOR_QUANTILES = 10


def coefficient_draws(draws: PosteriorDraws, j: int,
                      z_raw: np.ndarray) -> np.ndarray:
    """(n_draws, n_points) evaluations of coefficient j, original scale."""
    z_raw = np.atleast_2d(np.asarray(z_raw, dtype=np.float64))
    if j < 0 or j >= draws.n_ensembles:
        raise ValueError(f"coefficient index {j} outside 0..{draws.n_ensembles - 1}")
    zs = draws.scale_z(z_raw)
    out = np.empty((draws.n_draws, zs.shape[0]))
    for d, rec in enumerate(draws.records):
        out[d] = rec.forests[j].evaluate_sum(zs)
    y_sd = float(draws.meta["y_sd"])
    out *= y_sd
    if j == 0:
        out += float(draws.meta["y_mean"])
    return out


def beta_at(draws: PosteriorDraws, j: int, z: np.ndarray) -> np.ndarray:
    """Per-draw values of coefficient j at a single modifier vector."""
    return coefficient_draws(draws, j, np.atleast_2d(z))[:, 0]


@dataclass
class CoefficientSummary:
    """Pointwise mean and equal-tailed band for one coefficient surface."""

    points: np.ndarray   # (n_points, R) raw modifier rows
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    coefficient: int


def beta_summary(draws: PosteriorDraws, j: int, z_points: np.ndarray,
                 level: float = 0.95) -> CoefficientSummary:
    """Pointwise posterior mean and (alpha/2, 1-alpha/2) band for beta_j."""
    if draws.n_draws < _MIN_DRAWS_FOR_QUANTILES:
        raise DataError(f"need at least {_MIN_DRAWS_FOR_QUANTILES} draws for "
                        f"quantile bands, have {draws.n_draws}")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    z_points = np.atleast_2d(np.asarray(z_points, dtype=np.float64))
    vals = coefficient_draws(draws, j, z_points)
    alpha = 1.0 - level
    lo, hi = np.quantile(vals, [alpha / 2.0, 1.0 - alpha / 2.0], axis=0)
    return CoefficientSummary(points=z_points, mean=vals.mean(axis=0),
                              lower=lo, upper=hi, level=level, coefficient=j)


def fit_draws(draws: PosteriorDraws, x: np.ndarray,
              z_raw: np.ndarray) -> np.ndarray:
    """(n_draws, n_points) noiseless regression values, original scale."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    z_raw = np.atleast_2d(np.asarray(z_raw, dtype=np.float64))
    p = draws.n_ensembles - 1
    if x.shape[1] != p:
        raise DataError(f"x has {x.shape[1]} covariates, archive expects {p}")
    if x.shape[0] != z_raw.shape[0]:
        raise DataError("x and z row counts differ")
    total = coefficient_draws(draws, 0, z_raw)
    for j in range(1, p + 1):
        total += coefficient_draws(draws, j, z_raw) * x[:, j - 1]
    return total


@dataclass
class PredictionResult:
    """Predictive mean and equal-tailed interval per query row."""

    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    mode: str


def predict(draws: PosteriorDraws, x: np.ndarray, z_raw: np.ndarray,
            mode: str = "marginal", residual_history: np.ndarray | None = None,
            level: float = 0.95,
            rng: np.random.Generator | int | None = 0) -> PredictionResult:
    """Posterior predictive summary at new (x, z) rows.

    marginal mode integrates over a fresh unit-correlation noise draw per
    posterior draw.  conditional mode treats every query row as a future
    observation of one subject whose noise history is residual_history
    (original scale, one value per past observation; or a per-draw matrix),
    shifting and shrinking the noise through the equicorrelation conditional.
    The default rng is a fixed stream so outputs are reproducible; pass an
    explicit generator to vary them.
    """
    if mode not in ("marginal", "conditional"):
        raise ValueError("mode must be 'marginal' or 'conditional'")
    rng = np.random.default_rng(rng)
    centers = fit_draws(draws, x, z_raw)  # (n_draws, n_points)
    sigmas = draws.sigmas(original_scale=True)[:, None]
    if mode == "marginal":
        shift = 0.0
        noise_sd = sigmas
    else:
        if residual_history is None:
            raise DataError("conditional prediction needs residual_history")
        hist = np.asarray(residual_history, dtype=np.float64)
        if hist.ndim == 1:
            hist = np.broadcast_to(hist, (draws.n_draws, hist.shape[0]))
        elif hist.shape[0] != draws.n_draws:
            raise DataError("per-draw residual history must have one row per draw")
        rho = float(draws.meta["hyperparameters"]["rho"])
        k = hist.shape[1]
        denom = 1.0 + (k - 1.0) * rho
        shift = (rho * hist.sum(axis=1) / denom)[:, None]
        var_scale = 1.0 - k * rho * rho / denom
        noise_sd = sigmas * math.sqrt(max(var_scale, 0.0))
    noisy = centers + shift + noise_sd * rng.standard_normal(centers.shape)
    alpha = 1.0 - level
    lo, hi = np.quantile(noisy, [alpha / 2.0, 1.0 - alpha / 2.0], axis=0)
    return PredictionResult(mean=(centers + shift).mean(axis=0),
                            lower=lo, upper=hi, level=level, mode=mode)


def selection_probabilities(draws: PosteriorDraws, j: int) -> np.ndarray:
    """Fraction of draws in which ensemble j splits on each modifier."""
    if j < 0 or j >= draws.n_ensembles:
        raise ValueError(f"coefficient index {j} outside 0..{draws.n_ensembles - 1}")
    counts = np.stack([rec.split_count_matrix[j] for rec in draws.records])
    return (counts >= 1).mean(axis=0)


def selection_probability_matrix(draws: PosteriorDraws) -> np.ndarray:
    """(p+1, R) matrix of per-ensemble modifier selection probabilities."""
    stacked = np.stack([rec.split_count_matrix for rec in draws.records])
    return (stacked >= 1).mean(axis=0)


def median_probability_model(probs: np.ndarray) -> set[int]:
    """Zero-based indices with selection probability strictly above 0.5."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or np.any(probs < 0.0) or np.any(probs > 1.0):
        raise ValueError("probs must be a vector of values in [0, 1]")
    return set(np.nonzero(probs > 0.5)[0].tolist())
