"""Benchmark drivers and sampler-validation harnesses.

Three kinds of machinery live here: scoring (coefficient recovery, interval
coverage, modifier-selection confusion), experiment drivers (the 25-replicate
train/test benchmark, correlation cross-validation, a linear least-squares
comparison floor), and a joint-distribution test of the sampler itself.

The joint test compares two ways of sampling (parameters, data) from the
same joint law: forward draws (prior then likelihood) against a
successive-conditional chain that alternates "redraw data given parameters"
with one Gibbs sweep of "redraw parameters given data".  If the sweep leaves
its conditional invariant, every scalar functional has the same distribution
under both, so standardized mean differences act as z-scores.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np
import pandas as pd

from . import __version__
from .config import (Hyperparameters, SparsityState, concentration_from_index,
                     config_hash, default_hyperparameters,
                     guarded_dirichlet, sample_concentration_prior,
                     sample_sigma_prior)
from .correlation import CompoundSymmetry
from .data import DataError, PanelDataset
from .draws import PosteriorDraws
from .exceptions import ConfigError
from .posterior import (median_probability_model, predict,
                        selection_probability_matrix)
from .sampler import (ChainState, SamplerWorkspace, ensemble_fit,
                      fit_posterior, init_chain_state, sigma_log_acceptance,
                      update_sigma, update_split_probs, update_concentration,
                      update_tree)
from .synthetic import (TRUE_MODIFIER_SUPPORT, gen_panel, split_subjects,
                        subset_panel)
from .trees import (GeometricSplitPrior, RegressionTree,
                    sample_tree_structure, split_counts)

DEFAULT_RHO_GRID = (0.0, 0.25, 0.5, 0.75, 0.9)


# ----------------------------------------------------------------------
# scoring


@dataclass
class RecoveryReport:
    """Coefficient-recovery and predictive metrics on one test set."""

    mse_by_coefficient: np.ndarray
    pooled_mse: float
    coverage_by_coefficient: np.ndarray
    pooled_coverage: float
    mean_band_length: float
    predictive_rmse: float
    predictive_coverage: float
    mean_predictive_length: float

    def __post_init__(self):
        for c in (self.pooled_coverage, self.predictive_coverage):
            if not 0.0 <= c <= 1.0:
                raise ValueError("coverage outside [0, 1]")

    def to_rows(self) -> dict[str, float]:
        rows = {
            "beta_mse_pooled": self.pooled_mse,
            "beta_coverage_pooled": self.pooled_coverage,
            "beta_band_length": self.mean_band_length,
            "predictive_rmse": self.predictive_rmse,
            "predictive_coverage": self.predictive_coverage,
            "predictive_length": self.mean_predictive_length,
        }
        for j, (m, c) in enumerate(zip(self.mse_by_coefficient,
                                       self.coverage_by_coefficient)):
            rows[f"beta{j}_mse"] = float(m)
            rows[f"beta{j}_coverage"] = float(c)
        return rows


def score_recovery(beta_mean: np.ndarray, beta_lower: np.ndarray,
                   beta_upper: np.ndarray, beta_truth: np.ndarray,
                   y_pred: np.ndarray, y_lower: np.ndarray,
                   y_upper: np.ndarray, y_test: np.ndarray) -> RecoveryReport:
    """Score aligned (n_test, p+1) coefficient arrays and y predictions."""
    arrays = (beta_mean, beta_lower, beta_upper, beta_truth)
    if len({a.shape for a in arrays}) != 1 or beta_mean.ndim != 2:
        raise DataError("coefficient arrays must share one (n, p+1) shape")
    n = beta_mean.shape[0]
    if not (y_pred.shape == y_lower.shape == y_upper.shape == y_test.shape
            == (n,)):
        raise DataError("y arrays must align with the coefficient arrays")
    err2 = (beta_mean - beta_truth) ** 2
    inside = (beta_lower <= beta_truth) & (beta_truth <= beta_upper)
    y_inside = (y_lower <= y_test) & (y_test <= y_upper)
    return RecoveryReport(
        mse_by_coefficient=err2.mean(axis=0),
        pooled_mse=float(err2.mean()),
        coverage_by_coefficient=inside.mean(axis=0),
        pooled_coverage=float(inside.mean()),
        mean_band_length=float((beta_upper - beta_lower).mean()),
        predictive_rmse=float(np.sqrt(((y_pred - y_test) ** 2).mean())),
        predictive_coverage=float(y_inside.mean()),
        mean_predictive_length=float((y_upper - y_lower).mean()),
    )


@dataclass
class SelectionReport:
    """Pooled confusion-table metrics for modifier selection.

    Empty denominators report 1.0: no positives to find means nothing was
    missed, nothing selected means nothing was falsely selected.
    """

    sensitivity: float
    specificity: float
    precision: float
    accuracy: float
    true_positives: int
    true_negatives: int
    false_positives: int
    false_negatives: int


def score_selection(selected: list[set[int]], support: list[frozenset[int]],
                    n_modifiers: int) -> SelectionReport:
    """Pool the n_modifiers * len(selected) binary decisions."""
    if len(selected) != len(support):
        raise DataError("selected and support must have one entry per coefficient")
    tp = tn = fp = fn = 0
    for sel, truth in zip(selected, support):
        for r in range(n_modifiers):
            hit, real = r in sel, r in truth
            tp += hit and real
            tn += (not hit) and (not real)
            fp += hit and not real
            fn += real and not hit

    def ratio(num, den):
        return num / den if den > 0 else 1.0

    return SelectionReport(
        sensitivity=ratio(tp, tp + fn),
        specificity=ratio(tn, tn + fp),
        precision=ratio(tp, tp + fp),
        accuracy=ratio(tp + tn, tp + tn + fp + fn),
        true_positives=tp, true_negatives=tn,
        false_positives=fp, false_negatives=fn,
    )


# ----------------------------------------------------------------------
# linear comparison floor


@dataclass
class LinearBaseline:
    """Least squares of y on (1, x), modifiers ignored."""

    coef: np.ndarray  # intercept first
    used_ridge: bool

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return self.coef[0] + x @ self.coef[1:]

    def coefficient_matrix(self, n_rows: int) -> np.ndarray:
        """(n_rows, p+1) constant surfaces, for recovery comparisons."""
        return np.tile(self.coef, (n_rows, 1))


def fit_linear_baseline(data: PanelDataset) -> LinearBaseline:
    design = np.hstack([np.ones((data.n_rows, 1)), data.x])
    gram = design.T @ design
    used_ridge = np.linalg.matrix_rank(gram) < gram.shape[0]
    if used_ridge:
        gram = gram + 1e-8 * np.eye(gram.shape[0])
    coef = np.linalg.solve(gram, design.T @ data.y)
    return LinearBaseline(coef=coef, used_ridge=used_ridge)


# ----------------------------------------------------------------------
# correlation cross-validation


def cv_rho(data: PanelDataset, rho_grid=DEFAULT_RHO_GRID, n_folds: int = 5,
           hyper: Hyperparameters | None = None,
           rng: np.random.Generator | int | None = None
           ) -> tuple[float, pd.DataFrame]:
    """Pick rho by by-subject cross-validated predictive RMSE.

    All of a subject's rows stay in one fold.  Ties break toward smaller
    rho.  Returns the winner and a (rho, fold, rmse) frame.
    """
    grid = sorted(float(r) for r in rho_grid)
    if not grid:
        raise ConfigError("rho grid must be nonempty")
    if n_folds < 2:
        raise ConfigError("need at least 2 folds")
    if n_folds > data.n_subjects:
        raise DataError(f"{n_folds} folds but only {data.n_subjects} subjects")
    rng = np.random.default_rng(rng)
    if hyper is None:
        hyper = default_hyperparameters(data.n_covariates, data.n_modifiers,
                                        n_iter=500, n_burn=250, n_chains=1)
    folds = np.array_split(rng.permutation(data.n_subjects), n_folds)

    rows = []
    base = hyper.seed if hyper.seed is not None else 0
    for rho in grid:
        for f, held in enumerate(folds):
            held = np.sort(held)
            # seed each fit from the fold's content, not its position, so
            # permuting fold order cannot change any result
            key = f"{base}|{rho:.10f}|{held.tolist()}".encode()
            fit_seed = int.from_bytes(hashlib.sha256(key).digest()[:4], "little")
            h = hyper.with_overrides(rho=rho, seed=fit_seed)
            test_mask = np.isin(data.subject_index, held)
            train = PanelDataset.from_arrays(
                data.y[~test_mask], data.x[~test_mask], data.z[~test_mask],
                data.subject_index[~test_mask],
                rescale_z=False, standardize_y=True)
            draws = fit_posterior(train, h)
            pred = predict(draws, data.x[test_mask], data.z[test_mask],
                           mode="marginal")
            rmse = float(np.sqrt(((pred.mean - data.y[test_mask]) ** 2).mean()))
            rows.append({"rho": rho, "fold": f, "rmse": rmse})
    frame = pd.DataFrame(rows)
    return _choose_rho(frame), frame


def _choose_rho(frame: pd.DataFrame) -> float:
    """Smallest mean-RMSE rho; exact ties go to the smaller value."""
    mean_rmse = frame.groupby("rho")["rmse"].mean()
    return float(mean_rmse.idxmin())


# ----------------------------------------------------------------------
# joint-distribution sampler test


@dataclass
class JointTestResult:
    """Standardized forward-vs-chain mean differences per functional."""

    names: list[str]
    z_scores: np.ndarray
    forward_means: np.ndarray
    chain_means: np.ndarray
    excluded: list[str] = field(default_factory=list)

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z_scores)))


def _tiny_config() -> tuple[int, int, Hyperparameters]:
    hyper = Hyperparameters(
        n_trees=2, jump_sd=(0.7, 0.7), sigma_df=3.0, rho=0.25,
        n_iter=1, n_burn=0, n_chains=1, max_depth=3, min_leaf_obs=0,
        cutpoint_grid=tuple((np.arange(1, 8) / 8.0).tolist()))
    return 6, 2, hyper  # subjects, rows per subject


def _concentration_prior_no_boundary(n_modifiers: int,
                                     rng: np.random.Generator
                                     ) -> tuple[float, int]:
    """Prior draw of the concentration, excluding the degenerate grid origin.

    At grid index 0 the concentration is zero and the modifier-weight
    Dirichlet collapses to a vertex atom; the grid-Gibbs conditional gives
    that index zero weight at any interior weight vector, so the joint test
    must exclude it from the forward draw too or the two simulators would
    target different laws.
    """
    from .config import concentration_prior_log_pmf
    logs = np.array([concentration_prior_log_pmf(k, n_modifiers)
                     for k in range(1, 100)])
    p = np.exp(logs - logs.max())
    p /= p.sum()
    k = int(rng.choice(np.arange(1, 100), p=p))
    return concentration_from_index(k, n_modifiers), k


def _prior_state(ws: SamplerWorkspace, hyper: Hyperparameters,
                 rng: np.random.Generator) -> ChainState:
    """Exact prior draw of a ChainState (sparsity, trees, jumps, sigma)."""
    ensembles, assigns, sparsity = [], [], []
    grid = ws.cutpoint_grid
    for j in range(ws.n_ensembles):
        eta, k = _concentration_prior_no_boundary(ws.n_modifiers, rng)
        theta = guarded_dirichlet(np.full(ws.n_modifiers, eta / ws.n_modifiers),
                                  rng)
        sparsity.append(SparsityState(split_probs=theta, concentration=eta,
                                      concentration_index=k))
        trees_j, asg_j = [], []
        tau = float(ws.jump_sd[j])
        for _ in range(hyper.n_trees):
            struct = sample_tree_structure(hyper.split_prior, theta, rng,
                                           grid, hyper.max_depth)
            jumps = tau * rng.standard_normal(struct.n_leaves)
            trees_j.append(RegressionTree(struct, jumps))
            asg_j.append(struct.leaf_assignments(ws.z))
        ensembles.append(trees_j)
        assigns.append(asg_j)
    state = ChainState(
        ensembles=ensembles,
        sigma=sample_sigma_prior(hyper.sigma_df, rng),
        sparsity=sparsity,
        full_residuals=np.zeros(ws.n_rows),
        leaf_assign=assigns,
        rule_counts=np.stack([split_counts(e, ws.n_modifiers)
                              for e in ensembles]),
    )
    return state


def _draw_response(state: ChainState, ws: SamplerWorkspace,
                   rng: np.random.Generator) -> np.ndarray:
    fit = ensemble_fit(state, ws, use_cache=True)
    noise = state.sigma * ws.cs.sample_noise(ws.subject_sizes, rng)
    return fit + noise


def _functionals(state: ChainState, y: np.ndarray, ws: SamplerWorkspace,
                 z_probe: np.ndarray) -> np.ndarray:
    # every entry needs finite prior variance for the z-scores to obey a
    # CLT; sigma^2 and y^2 do not (the half-t(3) scale has no 4th moment),
    # hence log sigma and mean |y| instead
    beta = [sum(float(rt.evaluate_many(z_probe)[i]) for rt in state.ensembles[j])
            for j in range(ws.n_ensembles) for i in range(z_probe.shape[0])]
    leaves = sum(rt.jumps.shape[0] for ens in state.ensembles for rt in ens)
    return np.array([
        state.sigma,
        np.log(state.sigma),
        float(state.sigma < 1.0),  # bounded, survives a diverging chain
        *beta,
        state.sparsity[0].concentration,
        state.sparsity[-1].concentration,
        float(state.sparsity[0].split_probs[0]),
        float(state.sparsity[-1].split_probs[0]),
        float(leaves),
        float(y.mean()),
        float(np.abs(y).mean()),
    ])


def _functional_names(n_ensembles: int, n_probe: int) -> list[str]:
    names = ["sigma", "log_sigma", "sigma_below_one"]
    names += [f"beta{j}_at_probe{i}" for j in range(n_ensembles)
              for i in range(n_probe)]
    names += ["concentration_first", "concentration_last",
              "split_prob_first", "split_prob_last",
              "total_leaves", "y_mean", "y_abs_mean"]
    return names


def _update_sigma_broken(state, ws, hyper, rng):
    """Deliberately wrong sigma step: prior-ratio exponent sign flipped."""
    res = state.full_residuals
    rs = np.bincount(ws.subject_index, weights=res, minlength=ws.n_subjects)
    S = float(ws.a * (res @ res) + ws.b @ (rs * rs))
    N = res.shape[0]
    proposed = float(np.sqrt(0.5 * S / rng.standard_gamma(0.5 * N + 1.0)))
    raw = (+0.5 * (hyper.sigma_df + 1.0)
           * (np.log(hyper.sigma_df + proposed ** 2)
              - np.log(hyper.sigma_df + state.sigma ** 2))
           + 3.0 * (np.log(proposed) - np.log(state.sigma)))
    if raw >= 0.0 or rng.random() < np.exp(raw):
        state.sigma = proposed


def geweke_check(n_samples: int = 200_000,
                 rng: np.random.Generator | int | None = 0,
                 break_sigma: bool = False,
                 thin: int = 1) -> JointTestResult:
    """Forward-vs-successive-conditional comparison on a tiny configuration.

    Runs n_samples independent forward draws and an n_samples-step
    successive-conditional chain, then standardizes the difference of means
    of each functional.  Chain means use batch-means standard errors.
    Functionals whose prior variance is numerically zero are dropped.
    break_sigma swaps in a corrupted noise-scale update as a power control.
    """
    rng = np.random.default_rng(rng)
    n_subjects, n_per, hyper = _tiny_config()
    p = 1
    base_rng = np.random.default_rng(12345)  # fixed design, not part of test
    x = base_rng.standard_normal((n_subjects * n_per, p))
    z = base_rng.random((n_subjects * n_per, 2))
    subjects = np.repeat(np.arange(n_subjects), n_per)
    data = PanelDataset.from_arrays(np.zeros(n_subjects * n_per), x, z,
                                    subjects, rescale_z=False,
                                    standardize_y=False)
    ws = SamplerWorkspace.build(data, hyper)
    z_probe = np.array([[0.2, 0.7], [0.8, 0.3]])
    names = _functional_names(ws.n_ensembles, z_probe.shape[0])

    forward = np.empty((n_samples, len(names)))
    for s in range(n_samples):
        state = _prior_state(ws, hyper, rng)
        y = _draw_response(state, ws, rng)
        forward[s] = _functionals(state, y, ws, z_probe)

    chain = np.empty((n_samples, len(names)))
    state = _prior_state(ws, hyper, rng)
    sigma_step = _update_sigma_broken if break_sigma else update_sigma
    # a corrupted sampler may diverge to overflow; keep collecting samples
    # and let the z computation turn non-finite averages into infinite z
    with np.errstate(all="ignore"):
        for s in range(n_samples):
            try:
                for _ in range(thin):
                    ws.y = _draw_response(state, ws, rng)
                    state.full_residuals = ws.y - ensemble_fit(state, ws,
                                                               use_cache=True)
                    for j in range(ws.n_ensembles):
                        for m in range(hyper.n_trees):
                            update_tree(state, j, m, ws, hyper, rng)
                    sigma_step(state, ws, hyper, rng)
                    for j in range(ws.n_ensembles):
                        update_split_probs(state, j, ws, rng)
                        update_concentration(state, j, ws, rng)
                chain[s] = _functionals(state, ws.y, ws, z_probe)
            except (np.linalg.LinAlgError, ValueError, FloatingPointError):
                # numerically dead chain (possible when deliberately broken):
                # freeze at NaN so those functionals register as infinite z
                chain[s:] = np.nan
                break

    with np.errstate(all="ignore"):
        fwd_var = forward.var(axis=0)
        scale = np.maximum(forward.mean(axis=0) ** 2, 1.0)
        alive = fwd_var > 1e-12 * scale
        keep = [i for i in range(len(names)) if alive[i]]

        fwd_mean = forward.mean(axis=0)
        fwd_se2 = fwd_var / n_samples
        n_batches = min(100, n_samples)
        batches = np.array_split(chain, n_batches, axis=0)
        batch_means = np.stack([b.mean(axis=0) for b in batches])
        chain_mean = chain.mean(axis=0)
        chain_se2 = batch_means.var(axis=0, ddof=1) / n_batches
        z_scores = (fwd_mean - chain_mean) / np.sqrt(fwd_se2 + chain_se2)
    # a chain whose average is not even finite has certainly left the
    # target; report that as an infinite discrepancy rather than NaN
    bad = ~np.isfinite(chain_mean) | ~np.isfinite(chain_se2)
    z_scores = np.where(bad, np.inf, z_scores)
    return JointTestResult(
        names=[names[i] for i in keep],
        z_scores=z_scores[keep],
        forward_means=fwd_mean[keep],
        chain_means=chain_mean[keep],
        excluded=[names[i] for i in range(len(names)) if not alive[i]],
    )


# ----------------------------------------------------------------------
# exact equilibrium check on an enumerable model


@dataclass
class EquilibriumResult:
    """Empirical vs analytic state distribution of the two-state tree chain."""

    analytic_split_prob: float
    empirical_split_prob: float
    n_steps: int

    @property
    def tv_distance(self) -> float:
        # two states, so TV collapses to one absolute difference
        return abs(self.analytic_split_prob - self.empirical_split_prob)


def finite_model_check(n_steps: int = 1_000_000,
                       rng: np.random.Generator | int = 0) -> EquilibriumResult:
    """Run the tree move on a model small enough to solve by hand.

    One modifier, one cutpoint, depth cap 1, a single tree, no covariates,
    and a frozen noise scale leave exactly two reachable structures: the
    bare root and the root split at the lone cutpoint.  The chain's long-run
    occupancy of the split state must match the two-point posterior, which
    we compute here by dense multivariate-normal evaluation (the jump vector
    integrates out against its Gaussian prior, leaving a rank-L bump on the
    noise covariance).  Any bookkeeping slip in the move probabilities,
    depth truncation, or marginal-likelihood algebra shows up as a
    total-variation gap.
    """
    from scipy import stats

    rng = np.random.default_rng(rng)

    z = np.array([0.1, 0.3, 0.2, 0.4, 0.6, 0.8, 0.7, 0.9])
    noise = np.random.default_rng(5).standard_normal(8)
    y = np.where(z < 0.5, -0.6, 0.6) + 0.3 * noise
    subjects = np.repeat(np.arange(4), 2)
    data = PanelDataset.from_arrays(y, np.empty((8, 0)), z[:, None], subjects,
                                    standardize_y=False, z_bounds=(0.0, 1.0))

    split_gamma = 0.3
    sigma = 1.0
    tau = 1.0
    rho = 0.25
    hyper = Hyperparameters(n_trees=1, jump_sd=tau, rho=rho,
                            split_prior=GeometricSplitPrior(split_gamma),
                            max_depth=1, cutpoint_grid=(0.5,))
    ws = SamplerWorkspace.build(data, hyper)

    # analytic two-point posterior over {root leaf, split at 0.5}
    cs = CompoundSymmetry(rho)
    cov_noise = np.zeros((8, 8))
    for i in range(4):
        cov_noise[2 * i:2 * i + 2, 2 * i:2 * i + 2] = \
            sigma ** 2 * cs.correlation_matrix(2)
    w_leaf = np.ones((8, 1))
    w_split = np.column_stack([(z < 0.5).astype(float),
                               (z >= 0.5).astype(float)])
    log_m0 = stats.multivariate_normal(
        np.zeros(8), cov_noise + tau ** 2 * (w_leaf @ w_leaf.T)).logpdf(y)
    log_m1 = stats.multivariate_normal(
        np.zeros(8), cov_noise + tau ** 2 * (w_split @ w_split.T)).logpdf(y)
    # depth-0 split probability gamma^1; the depth cap makes the pair proper
    q0 = split_gamma
    log_odds = (np.log(q0) + log_m1) - (np.log(1.0 - q0) + log_m0)
    analytic = float(1.0 / (1.0 + np.exp(-log_odds)))

    state = init_chain_state(ws, hyper)
    state.sigma = sigma
    hits = 0
    for step in range(n_steps):
        update_tree(state, 0, 0, ws, hyper, rng)
        hits += state.ensembles[0][0].structure.n_leaves == 2
        if (step + 1) % 100_000 == 0:
            state.full_residuals = ws.y - ensemble_fit(state, ws,
                                                       use_cache=True)
    return EquilibriumResult(analytic, hits / n_steps, n_steps)


# ----------------------------------------------------------------------
# replicated train/test benchmark


@dataclass
class BenchmarkResult:
    results: pd.DataFrame       # one row per (replicate, method, metric)
    manifest: dict

    def pooled(self, method: str, metric: str) -> np.ndarray:
        f = self.results
        sel = f[(f["method"] == method) & (f["metric"] == metric)]
        return sel.sort_values("replicate")["value"].to_numpy()


def benchmark_recovery(n_replicates: int = 25, n_train: int = 75,
                       n_test: int = 25, hyper: Hyperparameters | None = None,
                       seed: int = 20_26, rho_data: float = 0.0,
                       progress=None) -> BenchmarkResult:
    """Replicated subject-level train/test splits of one synthetic panel.

    For each replicate: fit on the training subjects, evaluate coefficient
    recovery and prediction on the held-out subjects, and fit the linear
    floor on the same split.  progress, if given, is called with a dict per
    replicate (for CLI display).
    """
    root = np.random.SeedSequence(seed)
    data_seed, *rep_seeds = root.spawn(n_replicates + 1)
    data, truth = gen_panel(rng=np.random.default_rng(data_seed))
    if hyper is None:
        hyper = default_hyperparameters(data.n_covariates, data.n_modifiers)

    rows = []
    for r in range(n_replicates):
        t0 = time.perf_counter()
        rep_rng = np.random.default_rng(rep_seeds[r])
        train_ids, test_ids = split_subjects(data.n_subjects, n_train,
                                             n_test, rep_rng)
        train, _ = subset_panel(data, truth, train_ids)
        test, beta_truth = subset_panel(data, truth, test_ids,
                                        standardize_y=False)
        h = hyper.with_overrides(
            seed=int(np.random.default_rng(rep_seeds[r]).integers(2 ** 31)))
        draws = fit_posterior(train, h)

        report = score_fit(draws, test, beta_truth)
        base = fit_linear_baseline(train)
        base_beta = base.coefficient_matrix(test.n_rows)
        base_err = float(((base_beta - beta_truth) ** 2).mean())

        for metric, value in report.to_rows().items():
            rows.append({"replicate": r, "method": "vcbart",
                         "metric": metric, "value": value})
        rows.append({"replicate": r, "method": "linear",
                     "metric": "beta_mse_pooled", "value": base_err})
        base_rmse = float(np.sqrt(((base.predict(test.x) - test.y) ** 2).mean()))
        rows.append({"replicate": r, "method": "linear",
                     "metric": "predictive_rmse", "value": base_rmse})
        if progress is not None:
            progress({"replicate": r,
                      "vcbart_beta_mse": report.pooled_mse,
                      "linear_beta_mse": base_err,
                      "seconds": time.perf_counter() - t0})

    manifest = {
        "version": __version__,
        "seed": seed,
        "n_replicates": n_replicates,
        "n_train_subjects": n_train,
        "n_test_subjects": n_test,
        "rho_data": rho_data,
        "config_hash": config_hash(hyper.to_dict()),
        "hyperparameters": hyper.to_dict(),
    }
    return BenchmarkResult(results=pd.DataFrame(rows), manifest=manifest)


def score_fit(draws: PosteriorDraws, test: PanelDataset,
              beta_truth: np.ndarray, level: float = 0.95) -> RecoveryReport:
    """Evaluate stored draws against held-out rows with known coefficients."""
    n, p1 = beta_truth.shape
    from .posterior import coefficient_draws
    mean = np.empty((n, p1))
    lo = np.empty((n, p1))
    hi = np.empty((n, p1))
    alpha = 1.0 - level
    for j in range(p1):
        vals = coefficient_draws(draws, j, test.z)
        mean[:, j] = vals.mean(axis=0)
        lo[:, j], hi[:, j] = np.quantile(
            vals, [alpha / 2.0, 1.0 - alpha / 2.0], axis=0)
    pred = predict(draws, test.x, test.z, mode="marginal", level=level)
    return score_recovery(mean, lo, hi, beta_truth,
                          pred.mean, pred.lower, pred.upper, test.y)


def run_selection_experiment(hyper: Hyperparameters | None = None,
                             seed: int = 7_11) -> tuple[SelectionReport, np.ndarray]:
    """Fit the full synthetic panel and score median-probability selection.

    The default fit uses compact 10-tree ensembles rather than the fitting
    default of 50.  Large ensembles leave many trees idle, and idle trees
    accumulate redundant near-cancelling splits on spurious modifiers that
    the usage-based inclusion probabilities then count; forcing each
    ensemble to concentrate its splits makes those probabilities sharp.
    Small ensembles are the standard recommendation when tree usage is
    read as a variable-selection signal.
    """
    data, truth = gen_panel(rng=np.random.default_rng(
        np.random.SeedSequence(seed)))
    if hyper is None:
        hyper = default_hyperparameters(data.n_covariates, data.n_modifiers,
                                        n_trees=10, seed=seed)
    draws = fit_posterior(data, hyper)
    probs = selection_probability_matrix(draws)
    selected = [median_probability_model(probs[j]) for j in range(probs.shape[0])]
    report = score_selection(selected, list(TRUE_MODIFIER_SUPPORT),
                             data.n_modifiers)
    return report, probs


# ----------------------------------------------------------------------
# results persistence


def write_results(frame: pd.DataFrame, path) -> None:
    """Flat results CSV: one row per (replicate, method, metric)."""
    cols = ["replicate", "method", "metric", "value"]
    missing = [c for c in cols if c not in frame.columns]
    if missing:
        raise DataError(f"results frame missing columns {missing}")
    frame.loc[:, cols].to_csv(path, index=False)


def read_results(path) -> pd.DataFrame:
    return pd.read_csv(path)


def write_manifest(manifest: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
