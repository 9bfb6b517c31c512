"""Varying-coefficient regression with per-coefficient tree ensembles."""

__version__ = "0.1.0"

from .config import (GeometricSplitPrior, Hyperparameters,
                     PolynomialSplitPrior, default_hyperparameters)
from .correlation import CompoundSymmetry
from .data import PanelDataset, ingest_csv
from .draws import PosteriorDraws
from .estimator import VCBartRegressor
from .exceptions import (ArchiveError, ConfigError, DataError,
                         NumericalError, VCBartError)
from .posterior import (beta_at, beta_summary, median_probability_model,
                        predict, selection_probabilities)
from .sampler import fit_posterior, run_chain

__all__ = [
    "ArchiveError",
    "CompoundSymmetry",
    "ConfigError",
    "DataError",
    "GeometricSplitPrior",
    "Hyperparameters",
    "NumericalError",
    "PanelDataset",
    "PolynomialSplitPrior",
    "PosteriorDraws",
    "VCBartError",
    "VCBartRegressor",
    "beta_at",
    "beta_summary",
    "default_hyperparameters",
    "fit_posterior",
    "ingest_csv",
    "median_probability_model",
    "predict",
    "run_chain",
    "selection_probabilities",
    "__version__",
]
