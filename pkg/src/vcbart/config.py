"""Hyperparameters, prior densities, config files, and the config hash.

The sparsity prior on each ensemble's modifier weights is Dirichlet with a
single concentration parameter living on a fixed 100-point grid: grid point
k maps to concentration R * k / (100 - k), so k / 100 is the prior mean of
concentration / (concentration + R).  Point k = 100 would be infinite and is
excluded from the support.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, logsumexp

from .exceptions import ConfigError
from .trees import (DEFAULT_MAX_DEPTH, GeometricSplitPrior,
                    PolynomialSplitPrior, SplitPrior)

CONCENTRATION_GRID_SIZE = 100  # grid points k = 0..99


@dataclass(frozen=True)
class Hyperparameters:
    """Everything a sampling run needs besides the data.

    jump_sd is the prior standard deviation of leaf jumps: None means the
    default n_trees**-0.5 for every ensemble, a scalar applies to all
    ensembles, and a sequence gives one value per ensemble (intercept first).
    """

    n_trees: int = 50
    jump_sd: float | tuple | None = None
    sigma_df: float = 3.0
    split_prior: SplitPrior = field(default_factory=PolynomialSplitPrior)
    rho: float = 0.0
    n_iter: int = 1500
    n_burn: int = 500
    n_chains: int = 2
    seed: int | None = None
    max_depth: int = DEFAULT_MAX_DEPTH
    cutpoint_grid: tuple | None = None
    min_leaf_obs: int = 1

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("n_trees must be at least 1")
        if self.sigma_df <= 1:
            raise ConfigError("sigma_df must exceed 1")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"rho must lie in [0, 1), got {self.rho}")
        if self.n_burn < 0 or self.n_iter <= self.n_burn:
            raise ConfigError("need 0 <= n_burn < n_iter")
        if self.n_chains < 1:
            raise ConfigError("n_chains must be at least 1")
        if self.max_depth < 1:
            raise ConfigError("max_depth must be at least 1")
        if self.min_leaf_obs < 0:
            raise ConfigError("min_leaf_obs must be nonnegative")
        if self.jump_sd is not None:
            arr = np.atleast_1d(np.asarray(self.jump_sd, dtype=np.float64))
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise ConfigError("jump_sd values must be positive and finite")
        if self.cutpoint_grid is not None:
            grid = np.asarray(self.cutpoint_grid, dtype=np.float64)
            if grid.size == 0 or np.any(grid <= 0.0) or np.any(grid >= 1.0):
                raise ConfigError("cutpoint_grid values must lie strictly in (0, 1)")

    def resolved_jump_sd(self, n_covariates: int) -> np.ndarray:
        """Per-ensemble jump prior sd, length n_covariates + 1."""
        k = n_covariates + 1
        if self.jump_sd is None:
            return np.full(k, self.n_trees ** -0.5)
        arr = np.atleast_1d(np.asarray(self.jump_sd, dtype=np.float64))
        if arr.size == 1:
            return np.full(k, float(arr[0]))
        if arr.size != k:
            raise ConfigError(
                f"jump_sd has {arr.size} entries but the model has {k} ensembles")
        return arr.copy()

    def cutpoint_grid_array(self) -> np.ndarray | None:
        if self.cutpoint_grid is None:
            return None
        return np.asarray(self.cutpoint_grid, dtype=np.float64)

    def with_overrides(self, **kwargs) -> "Hyperparameters":
        return replace(self, **kwargs)

    def to_dict(self) -> dict:
        d = {
            "n_trees": self.n_trees,
            "jump_sd": _jsonable(self.jump_sd),
            "sigma_df": self.sigma_df,
            "split_prior": _split_prior_to_dict(self.split_prior),
            "rho": self.rho,
            "n_iter": self.n_iter,
            "n_burn": self.n_burn,
            "n_chains": self.n_chains,
            "seed": self.seed,
            "max_depth": self.max_depth,
            "cutpoint_grid": _jsonable(self.cutpoint_grid),
            "min_leaf_obs": self.min_leaf_obs,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparameters":
        d = dict(d)
        sp = d.get("split_prior")
        if isinstance(sp, dict):
            d["split_prior"] = _split_prior_from_dict(sp)
        for key in ("jump_sd", "cutpoint_grid"):
            if isinstance(d.get(key), list):
                d[key] = tuple(d[key])
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown hyperparameter(s): {sorted(unknown)}")
        return cls(**d)


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, tuple):
        return list(value)
    return value


def _split_prior_to_dict(sp: SplitPrior) -> dict:
    if isinstance(sp, PolynomialSplitPrior):
        return {"kind": "polynomial", "base": sp.base, "power": sp.power}
    if isinstance(sp, GeometricSplitPrior):
        return {"kind": "geometric", "gamma": sp.gamma}
    raise ConfigError(f"unknown split prior type {type(sp).__name__}")


def _split_prior_from_dict(d: dict) -> SplitPrior:
    kind = d.get("kind")
    if kind == "polynomial":
        return PolynomialSplitPrior(base=d["base"], power=d["power"])
    if kind == "geometric":
        return GeometricSplitPrior(gamma=d["gamma"])
    raise ConfigError(f"unknown split prior kind {kind!r}")


# ----------------------------------------------------------------------
# sparsity state and priors


@dataclass
class SparsityState:
    """Per-ensemble modifier weights and their Dirichlet concentration."""

    split_probs: np.ndarray
    concentration: float
    concentration_index: int  # position on the 100-point grid

    @classmethod
    def uniform(cls, n_modifiers: int) -> "SparsityState":
        # midpoint of the grid: concentration equals the modifier count
        k = CONCENTRATION_GRID_SIZE // 2
        return cls(np.full(n_modifiers, 1.0 / n_modifiers),
                   concentration_from_index(k, n_modifiers), k)


def concentration_grid(n_modifiers: int) -> np.ndarray:
    """Concentration values at grid points k = 0..99."""
    k = np.arange(CONCENTRATION_GRID_SIZE, dtype=np.float64)
    return n_modifiers * k / (100.0 - k)


def concentration_from_index(k: int, n_modifiers: int) -> float:
    if not 0 <= k < CONCENTRATION_GRID_SIZE:
        raise ConfigError(f"grid index {k} outside 0..{CONCENTRATION_GRID_SIZE - 1}")
    return n_modifiers * k / (100.0 - k)


@lru_cache(maxsize=None)
def _concentration_prior_terms(n_modifiers: int):
    """Cached pieces of the concentration prior and posterior over the grid.

    Returns (grid, log_prior_normalized, lgamma_term, dirichlet_coef) where
    lgamma_term[k] = lgamma(eta_k) - R * lgamma(eta_k / R) and
    dirichlet_coef[k] = eta_k / R - 1.  At k = 0 the Dirichlet density
    degenerates; its posterior weight is exactly zero for R >= 2 and the
    lgamma term is pinned to -inf there (prior-only for R = 1).
    """
    R = n_modifiers
    grid = concentration_grid(R)
    k = np.arange(CONCENTRATION_GRID_SIZE, dtype=np.float64)
    log_prior = (R - 1) * np.log((100.0 - k) / 100.0)
    log_prior -= logsumexp(log_prior)
    lgamma_term = np.empty(CONCENTRATION_GRID_SIZE)
    lgamma_term[0] = -np.inf if R >= 2 else 0.0
    lgamma_term[1:] = gammaln(grid[1:]) - R * gammaln(grid[1:] / R)
    coef = grid / R - 1.0
    return grid, log_prior, lgamma_term, coef


def concentration_prior_log_pmf(k: int, n_modifiers: int) -> float:
    """Unnormalized log prior mass of grid point k: (R-1) * log((100-k)/100).

    Point k = 100 maps to -inf (zero mass: its concentration would be
    infinite); all other points are proper.
    """
    if not 0 <= k <= 100:
        raise ConfigError(f"grid index {k} outside 0..100")
    if k == 100:
        return -math.inf
    return (n_modifiers - 1) * math.log((100.0 - k) / 100.0)


def concentration_posterior_log_weights(split_probs: np.ndarray,
                                        n_modifiers: int) -> np.ndarray:
    """Unnormalized log posterior over the concentration grid given weights.

    Weights below 1e-12 are clamped before taking logs so a numerically
    degenerate Dirichlet draw cannot poison the update.
    """
    _, log_prior, lgamma_term, coef = _concentration_prior_terms(n_modifiers)
    log_theta_sum = float(np.sum(np.log(np.maximum(split_probs, 1e-12))))
    return log_prior + lgamma_term + coef * log_theta_sum


def sample_concentration_prior(n_modifiers: int,
                               rng: np.random.Generator) -> tuple[float, int]:
    """Draw (concentration, grid index) from the prior pmf."""
    _, log_prior, _, _ = _concentration_prior_terms(n_modifiers)
    p = np.exp(log_prior - np.max(log_prior))
    p /= p.sum()
    k = int(rng.choice(CONCENTRATION_GRID_SIZE, p=p))
    return concentration_from_index(k, n_modifiers), k


def guarded_dirichlet(alpha: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Dirichlet draw via normalized gammas, safe at tiny concentrations.

    When every gamma component underflows to zero the draw collapses; the
    correct small-concentration limit is a single vertex chosen with
    probability proportional to alpha, which is what the fallback does.
    """
    g = rng.standard_gamma(alpha)
    total = g.sum()
    if total > 0.0 and np.isfinite(total):
        return g / total
    out = np.zeros(len(alpha))
    p = np.asarray(alpha, dtype=np.float64)
    if p.sum() > 0.0:
        out[int(rng.choice(len(alpha), p=p / p.sum()))] = 1.0
    else:
        # alpha identically zero: the symmetric weak limit, a uniform vertex
        out[int(rng.integers(len(alpha)))] = 1.0
    return out


def sample_split_probs_prior(concentration: float, n_modifiers: int,
                             rng: np.random.Generator) -> np.ndarray:
    """Draw modifier weights from Dirichlet(concentration / R, ..., R times).

    The concentration = 0 boundary is the weak limit: all mass on a single
    uniformly chosen modifier.
    """
    R = n_modifiers
    if R == 1:
        return np.ones(1)
    if concentration <= 0.0:
        probs = np.zeros(R)
        probs[int(rng.integers(R))] = 1.0
        return probs
    return guarded_dirichlet(np.full(R, concentration / R), rng)


def sigma_log_prior(sigma: float, df: float) -> float:
    """Log kernel of the half-t prior on the noise scale: -(df+1)/2 log(df + sigma^2)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return -0.5 * (df + 1.0) * math.log(df + sigma * sigma)


def sample_sigma_prior(df: float, rng: np.random.Generator) -> float:
    """Draw the noise scale from its half-t prior."""
    return abs(float(rng.standard_t(df)))


def default_hyperparameters(p: int, n_modifiers: int, *, jump_sd_scale: float = 1.0,
                            **overrides) -> Hyperparameters:
    """Paper-default settings materialized for a model with p covariates.

    Fifty trees per ensemble with jump sd n_trees**-0.5 (optionally scaled
    for sensitivity sweeps), half-t df 3, independent errors, 1500 sweeps
    with 500 burned, two chains.  n_modifiers is validated for symmetry with
    the data contract but does not enter any default.
    """
    if p < 0:
        raise ConfigError("p must be nonnegative")
    if n_modifiers < 1:
        raise ConfigError("need at least one modifier")
    if jump_sd_scale <= 0:
        raise ConfigError("jump_sd_scale must be positive")
    n_trees = overrides.pop("n_trees", 50)
    jump_sd = overrides.pop(
        "jump_sd", tuple([jump_sd_scale * n_trees ** -0.5] * (p + 1)))
    return Hyperparameters(n_trees=n_trees, jump_sd=jump_sd, **overrides)


# ----------------------------------------------------------------------
# config files and hashing


def load_config_file(path) -> dict:
    """Parse a plain ``key = value`` config file into a flat dict.

    Comments start with '#'; values are parsed as int, float, true/false,
    a comma-separated list of numbers, or left as a bare string.
    """
    options: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            if key in options:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            options[key] = _parse_value(value.strip())
    return options


def _parse_value(text: str):
    if "," in text:
        return tuple(_parse_scalar(part.strip()) for part in text.split(","))
    return _parse_scalar(text)


def _parse_scalar(text: str):
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("none", "null"):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def canonical_json(obj) -> str:
    """Deterministic JSON text: sorted keys, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    """sha256 over the canonical JSON form of a configuration mapping."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()
