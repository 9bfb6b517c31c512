"""Compound-symmetry (exchangeable) within-subject error structure.

A subject with n rows has error covariance sigma^2 * C_n(rho) where C_n has
unit diagonal and constant off-diagonal rho.  Its inverse is a scaled
identity plus a rank-one term,

    C_n(rho)^-1 = a * I + b(n) * J,   a = 1/(1-rho),
    b(n) = -a * rho / (1 + (n-1) * rho),

so every quadratic form, determinant, and conditional moment below runs in
O(n) without forming a matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError


@dataclass(frozen=True)
class CompoundSymmetry:
    """Exchangeable correlation with a fixed coefficient rho in [0, 1)."""

    rho: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"rho must lie in [0, 1), got {self.rho}")

    # ------------------------------------------------------------------
    # precision pieces

    def precision_coeffs(self, n_rows) -> tuple[float, np.ndarray | float]:
        """(a, b) with C_n^-1 = a*I + b*J; b broadcasts over array n_rows."""
        n = np.asarray(n_rows, dtype=np.float64)
        a = 1.0 / (1.0 - self.rho)
        b = -a * self.rho / (1.0 + (n - 1.0) * self.rho)
        return a, b

    def quad_form(self, u: np.ndarray, v: np.ndarray) -> float:
        """u' C_n^-1 v for one subject, via single-pass sums."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        if u.shape != v.shape:
            raise ValueError("quad_form needs equal-length vectors")
        a, b = self.precision_coeffs(u.shape[0])
        return float(a * (u @ v) + b * u.sum() * v.sum())

    def log_det_precision(self, n_rows: int) -> float:
        """log det C_n^-1 = -(n-1) log(1-rho) - log(1+(n-1) rho)."""
        n = int(n_rows)
        return -(n - 1) * math.log(1.0 - self.rho) - math.log(1.0 + (n - 1) * self.rho)

    # ------------------------------------------------------------------
    # dense forms, used by oracles and small problems

    def correlation_matrix(self, n_rows: int) -> np.ndarray:
        n = int(n_rows)
        return (1.0 - self.rho) * np.eye(n) + self.rho * np.ones((n, n))

    def precision_matrix(self, n_rows: int) -> np.ndarray:
        a, b = self.precision_coeffs(n_rows)
        n = int(n_rows)
        return a * np.eye(n) + b * np.ones((n, n))

    # ------------------------------------------------------------------
    # prediction and simulation

    def conditional_predictive(self, sigma: float,
                               residuals: np.ndarray) -> tuple[float, float]:
        """Mean shift and variance of a new row given observed residuals.

        For k observed same-subject residuals with sum S, the new row's error
        is Gaussian with mean rho * S / (1 + (k-1) rho) and variance
        sigma^2 * (1 - k rho^2 / (1 + (k-1) rho)).  With k = 0 this reduces
        to the marginal N(0, sigma^2).
        """
        residuals = np.asarray(residuals, dtype=np.float64)
        k = residuals.shape[0]
        if k == 0:
            return 0.0, float(sigma) ** 2
        denom = 1.0 + (k - 1) * self.rho
        shift = self.rho * float(residuals.sum()) / denom
        var = float(sigma) ** 2 * (1.0 - k * self.rho ** 2 / denom)
        return shift, var

    def sample_noise(self, subject_sizes: np.ndarray,
                     rng: np.random.Generator) -> np.ndarray:
        """Unit-scale correlated noise, one flat vector over all subjects.

        Draws e_it = sqrt(rho) * a_i + sqrt(1-rho) * b_it, which has unit
        variance and within-subject correlation exactly rho.
        """
        sizes = np.asarray(subject_sizes, dtype=np.intp)
        total = int(sizes.sum())
        shared = np.repeat(rng.standard_normal(len(sizes)), sizes)
        own = rng.standard_normal(total)
        return math.sqrt(self.rho) * shared + math.sqrt(1.0 - self.rho) * own
