"""Synthetic panel benchmark: six known coefficient surfaces over 20 modifiers.

Covariates are correlated Gaussians, modifiers are uniform on [0, 1] with six
columns dichotomized at 0.5, and the response is the varying-coefficient
signal plus compound-symmetry panel noise.  Coefficient 1 is a Gaussian
process draw tabulated on a fixed grid, so the "true" function is itself
random but reproducible per seed; all other coefficients are closed forms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz

from .correlation import CompoundSymmetry
from .data import PanelDataset
from .exceptions import NumericalError

N_COVARIATES = 5
N_MODIFIERS = 20
# dichotomized modifier columns, zero-based (second and last five of twenty)
BINARY_MODIFIER_COLUMNS = (1, 15, 16, 17, 18, 19)
# which modifier columns each coefficient function actually reads, zero-based
TRUE_MODIFIER_SUPPORT = (
    frozenset({0, 1}),
    frozenset({0}),
    frozenset({0}),
    frozenset({0, 2, 3}),
    frozenset({0, 1, 2, 3, 4}),
    frozenset({0, 1, 2, 3}),
)
GP_GRID_SIZE = 1001
_GP_JITTER_START = 1e-8
_GP_JITTER_LIMIT = 1e-2


def covariate_covariance(p: int = N_COVARIATES) -> np.ndarray:
    """Covariance with entries 0.75^|i-j|."""
    return toeplitz(0.75 ** np.arange(p))


def gen_covariates(count: int, p: int = N_COVARIATES,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Mean-zero Gaussian rows with the banded covariance above."""
    rng = np.random.default_rng(rng)
    chol = np.linalg.cholesky(covariate_covariance(p))
    return rng.standard_normal((count, p)) @ chol.T


def gen_modifiers(count: int, R: int = N_MODIFIERS,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Uniform columns; the designated ones collapse to {0,1} at >= 0.5."""
    rng = np.random.default_rng(rng)
    z = rng.random((count, R))
    for col in BINARY_MODIFIER_COLUMNS:
        if col < R:
            z[:, col] = (z[:, col] >= 0.5).astype(np.float64)
    return z


def beta_true(j: int, z: np.ndarray) -> np.ndarray:
    """Closed-form coefficient j at modifier rows z (j=1 lives in a GP table)."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if j == 1:
        raise ValueError("coefficient 1 is a stored GP draw; evaluate it "
                         "through SyntheticTruth.beta or Beta1Table")
    z1 = z[:, 0]
    if j == 0:
        z2 = z[:, 1]
        return 3.0 * z1 + (2.0 - 5.0 * z2) * np.sin(np.pi * z1) - 2.0 * z2
    if j == 2:
        hump = 3.0 - 3.0 * z1 ** 2 * np.cos(6.0 * np.pi * z1)
        return hump * (z1 > 0.6) - 10.0 * np.sqrt(z1) * (z1 < 0.25)
    if j == 3:
        z3, z4 = z[:, 2], z[:, 3]
        return (np.cbrt(1.0 - z3) * np.sin(3.0 * np.pi * (1.0 - z4))
                - np.sqrt(1.0 - z1))
    if j == 4:
        z2, z3, z4, z5 = z[:, 1], z[:, 2], z[:, 3], z[:, 4]
        return (10.0 * np.sin(np.pi * z1 * z2) + 20.0 * (z3 - 0.5) ** 2
                + 10.0 * z4 + 5.0 * z5)
    if j == 5:
        z2, z3, z4 = z[:, 1], z[:, 2], z[:, 3]
        return (np.exp(np.sin((0.9 * (z1 + 0.48)) ** 10)) + z2 * z3 + z4)
    raise ValueError(f"coefficient index must be 0..5, got {j}")


def gp_kernel(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sharply decaying first-modifier kernel; K(z, z) = 2."""
    d2 = (np.subtract.outer(u, v)) ** 2
    return 2.0 * np.exp(-d2 / (2.0 * 0.05 ** 2)
                        - (2.0 / 0.1 ** 2) * np.sin(np.pi * d2 / 4.0))


def gp_draw_beta1(grid: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One GP draw on the grid, regularizing the kernel as needed.

    The kernel (a sin of squared distance) is not guaranteed positive
    semi-definite, so a diagonal jitter escalates tenfold from 1e-8 until the
    Cholesky succeeds; past 1e-2 the kernel is declared pathological.
    """
    grid = np.asarray(grid, dtype=np.float64)
    K = gp_kernel(grid, grid)
    jitter = _GP_JITTER_START
    while True:
        try:
            chol = np.linalg.cholesky(K + jitter * np.eye(grid.shape[0]))
            break
        except np.linalg.LinAlgError:
            jitter *= 10.0
            if jitter > _GP_JITTER_LIMIT:
                raise NumericalError(
                    "coefficient-1 kernel not positive semi-definite even "
                    f"with jitter {_GP_JITTER_LIMIT}") from None
    return chol @ rng.standard_normal(grid.shape[0])


@dataclass(frozen=True)
class Beta1Table:
    """Tabulated GP draw; piecewise-linear between grid points."""

    grid: np.ndarray
    values: np.ndarray

    def __call__(self, z1: np.ndarray) -> np.ndarray:
        return np.interp(np.asarray(z1, dtype=np.float64),
                         self.grid, self.values)


@dataclass
class SyntheticTruth:
    """Ground truth attached to one generated panel."""

    coefficients: np.ndarray          # (N, 6) true beta_j at each row
    support: tuple[frozenset[int], ...]
    beta1: Beta1Table
    params: dict

    def beta(self, j: int, z: np.ndarray) -> np.ndarray:
        """True coefficient j at arbitrary modifier rows."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if j == 1:
            return self.beta1(z[:, 0])
        return beta_true(j, z)

    def signal(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        """True regression surface beta_0(z) + sum_j beta_j(z) x_j."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        total = self.beta(0, z)
        for j in range(1, x.shape[1] + 1):
            total = total + self.beta(j, z) * x[:, j - 1]
        return total


def gen_panel(n: int = 500, n_i: int = 4, sigma: float = 1.0,
              rho: float = 0.0, rng: np.random.Generator | int | None = None,
              standardize_y: bool = True) -> tuple[PanelDataset, SyntheticTruth]:
    """Generate the benchmark panel and its ground truth.

    Draw order (covariates, modifiers, GP, noise) is fixed so a seed pins
    the whole dataset.  Modifiers are drawn per observation.
    """
    rng = np.random.default_rng(rng)
    seed_note = None  # callers wanting provenance should pass an int seed
    if isinstance(rng.bit_generator.seed_seq, np.random.SeedSequence):
        seed_note = rng.bit_generator.seed_seq.entropy
    N = n * n_i
    x = gen_covariates(N, N_COVARIATES, rng)
    z = gen_modifiers(N, N_MODIFIERS, rng)
    beta1 = Beta1Table(np.linspace(0.0, 1.0, GP_GRID_SIZE),
                       gp_draw_beta1(np.linspace(0.0, 1.0, GP_GRID_SIZE), rng))

    truth = SyntheticTruth(
        coefficients=np.empty((N, N_COVARIATES + 1)),
        support=TRUE_MODIFIER_SUPPORT,
        beta1=beta1,
        params={"n": n, "n_i": n_i, "sigma": sigma, "rho": rho,
                "seed_entropy": seed_note},
    )
    for j in range(N_COVARIATES + 1):
        truth.coefficients[:, j] = truth.beta(j, z)

    signal = truth.coefficients[:, 0] + np.einsum(
        "nj,nj->n", truth.coefficients[:, 1:], x)
    sizes = np.full(n, n_i, dtype=np.intp)
    noise = sigma * CompoundSymmetry(rho).sample_noise(sizes, rng)
    y = signal + noise
    subjects = np.repeat(np.arange(n), n_i)
    data = PanelDataset.from_arrays(y, x, z, subjects, z_bounds=(0.0, 1.0),
                                    standardize_y=standardize_y)
    return data, truth


def split_subjects(n_subjects: int, n_train: int, n_test: int,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint train/test subject draws without replacement."""
    if n_train + n_test > n_subjects:
        raise ValueError("train + test exceeds the number of subjects")
    perm = rng.permutation(n_subjects)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_test])


def subset_panel(data: PanelDataset, truth: SyntheticTruth,
                 subject_ids: np.ndarray,
                 standardize_y: bool = True) -> tuple[PanelDataset, np.ndarray]:
    """Rows of the chosen subjects as a fresh dataset, plus their true betas.

    The subset is re-ingested through from_arrays so y standardization
    reflects the subset, exactly as a user fitting that file would see it.
    """
    mask = np.isin(data.subject_index, subject_ids)
    y_raw = data.y[mask]
    sub = PanelDataset.from_arrays(
        y_raw, data.x[mask], data.z[mask], data.subject_index[mask],
        z_bounds=(0.0, 1.0), standardize_y=standardize_y,
        x_names=data.x_names, z_names=data.z_names)
    return sub, truth.coefficients[mask]
