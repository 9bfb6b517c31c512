"""Metropolis-within-Gibbs sampler for varying-coefficient tree ensembles.

One model state holds p+1 ensembles of regression trees (ensemble 0 carries
the intercept through an implicit all-ones covariate), a noise scale sigma,
and per-ensemble sparsity states.  A sweep updates every tree, then sigma,
then the sparsity parameters of each ensemble.

Tree updates work on partial residuals.  For one tree with L leaves, the
leaf-jump conditional is Normal(Lambda * Theta, Lambda) with

    Lambda^-1 = tau^-2 I_L + sigma^-2 Sum_i X_i' Omega_i X_i
    Theta     = sigma^-2 Sum_i X_i' Omega_i r_i

and the compound-symmetry precision Omega_i = a I + b_i J reduces every
subject's contribution to leaf-wise sums of x and x^2, so assembling the
sufficient statistics is O(N) plus O(n L^2) for the rank-one parts; with
rho = 0 everything stays diagonal and no factorization is needed.

The MH acceptance for a grow or prune move is, in logs,

    delta log marginal + delta structural tree prior
        + (structural reverse proposal - structural forward proposal).

The decision-rule prior (modifier weight times cutpoint density) is absent
because the proposal draws rules from exactly that prior, so the two terms
cancel; skipping the shared factor keeps the ratio finite even when a
modifier weight is zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .config import (Hyperparameters, SparsityState, concentration_from_index,
                     concentration_posterior_log_weights, config_hash,
                     guarded_dirichlet)
from .correlation import CompoundSymmetry
from .data import PanelDataset
from .draws import DrawRecord, PackedForest, PosteriorDraws
from .exceptions import NumericalError
from .trees import (DecisionTree, RegressionTree, constant_tree,
                    grow_proposal, prune_proposal, split_counts,
                    split_log_tables)

SCHEMA_VERSION = 1
_RESIDUAL_REFRESH_EVERY = 200  # sweeps between from-scratch residual rebuilds


# ----------------------------------------------------------------------
# workspace and state


@dataclass(eq=False)
class SamplerWorkspace:
    """Precomputed read-only views of one dataset for a given configuration."""

    y: np.ndarray              # (N,) response on the fitting scale
    x0: np.ndarray             # (N, p+1) covariates with leading ones column
    z: np.ndarray              # (N, R) modifiers in [0, 1]
    subject_index: np.ndarray  # (N,) contiguous block codes
    n_subjects: int
    subject_sizes: np.ndarray
    rho: float
    a: float                   # precision diagonal coefficient
    b: np.ndarray              # (n,) per-subject rank-one coefficient
    cs: CompoundSymmetry
    jump_sd: np.ndarray        # (p+1,)
    log_jump_sd: np.ndarray
    inv_jump_sd2: np.ndarray
    cutpoint_grid: np.ndarray | None

    @classmethod
    def build(cls, data: PanelDataset, hyper: Hyperparameters) -> "SamplerWorkspace":
        cs = CompoundSymmetry(hyper.rho)
        sizes = data.subject_sizes
        a, b = cs.precision_coeffs(sizes)
        jump_sd = hyper.resolved_jump_sd(data.n_covariates)
        x0 = np.hstack([np.ones((data.n_rows, 1)), data.x])
        return cls(
            y=data.y_standardized(),
            x0=np.ascontiguousarray(x0),
            z=np.ascontiguousarray(data.z),
            subject_index=data.subject_index,
            n_subjects=data.n_subjects,
            subject_sizes=sizes,
            rho=hyper.rho,
            a=float(a),
            b=np.atleast_1d(np.asarray(b, dtype=np.float64)),
            cs=cs,
            jump_sd=jump_sd,
            log_jump_sd=np.log(jump_sd),
            inv_jump_sd2=jump_sd ** -2.0,
            cutpoint_grid=hyper.cutpoint_grid_array(),
        )

    @property
    def n_rows(self) -> int:
        return self.y.shape[0]

    @property
    def n_ensembles(self) -> int:
        return self.x0.shape[1]

    @property
    def n_modifiers(self) -> int:
        return self.z.shape[1]


@dataclass(eq=False)
class ChainState:
    """Mutable sampler state plus cached leaf assignments and rule counts."""

    ensembles: list[list[RegressionTree]]
    sigma: float
    sparsity: list[SparsityState]
    full_residuals: np.ndarray
    leaf_assign: list[list[np.ndarray]]
    rule_counts: np.ndarray  # (p+1, R), kept in sync with accepted moves
    tree_proposals: int = 0
    tree_accepts: int = 0
    sigma_proposals: int = 0
    sigma_accepts: int = 0


def init_chain_state(ws: SamplerWorkspace, hyper: Hyperparameters) -> ChainState:
    """Deterministic start: root-only zero trees, sigma 1, uniform sparsity."""
    n_ens = ws.n_ensembles
    ensembles = [[constant_tree(0.0) for _ in range(hyper.n_trees)]
                 for _ in range(n_ens)]
    assign = [[np.zeros(ws.n_rows, dtype=np.intp) for _ in range(hyper.n_trees)]
              for _ in range(n_ens)]
    return ChainState(
        ensembles=ensembles,
        sigma=1.0,
        sparsity=[SparsityState.uniform(ws.n_modifiers) for _ in range(n_ens)],
        full_residuals=ws.y.copy(),
        leaf_assign=assign,
        rule_counts=np.zeros((n_ens, ws.n_modifiers), dtype=np.int64),
    )


# ----------------------------------------------------------------------
# residual bookkeeping


def partial_residuals(state: ChainState, j: int, m: int,
                      ws: SamplerWorkspace) -> np.ndarray:
    """Full residuals with tree (j, m)'s contribution added back."""
    rt = state.ensembles[j][m]
    contrib = rt.jumps[state.leaf_assign[j][m]]
    if j != 0:
        contrib = ws.x0[:, j] * contrib
    return state.full_residuals + contrib


def ensemble_fit(state: ChainState, ws: SamplerWorkspace,
                 use_cache: bool = False) -> np.ndarray:
    """Fitted values Sum_j x_j * beta_j(z) of the current state."""
    total = np.zeros(ws.n_rows)
    for j, ensemble in enumerate(state.ensembles):
        part = np.zeros(ws.n_rows)
        for m, rt in enumerate(ensemble):
            if use_cache:
                part += rt.jumps[state.leaf_assign[j][m]]
            else:
                part += rt.evaluate_many(ws.z)
        total += part if j == 0 else ws.x0[:, j] * part
    return total


def recompute_full_residuals(state: ChainState, ws: SamplerWorkspace,
                             use_cache: bool = False) -> np.ndarray:
    """From-scratch residuals; the independent oracle for the cached ones."""
    return ws.y - ensemble_fit(state, ws, use_cache=use_cache)


# ----------------------------------------------------------------------
# leaf sufficient statistics


@dataclass
class LeafSuffStats:
    """Precision (Lambda^-1, SPD) and moment (Theta) of one tree's jumps."""

    precision: np.ndarray
    moment: np.ndarray


def leaf_sufficient_stats(ws: SamplerWorkspace, tree: DecisionTree,
                          partial_res: np.ndarray, x_col: np.ndarray | None,
                          sigma: float, tau: float) -> LeafSuffStats:
    """Assemble Lambda^-1 and Theta for a tree against partial residuals.

    x_col None means the implicit all-ones intercept covariate.
    """
    assign = tree.leaf_assignments(ws.z)
    L = tree.n_leaves
    mat, moment = _assemble_stats(assign, L, partial_res, x_col, ws,
                                  1.0 / (sigma * sigma), tau ** -2.0)
    if mat.ndim == 1:
        mat = np.diag(mat)
    return LeafSuffStats(mat, moment)


def tree_log_marginal(ss: LeafSuffStats, tau: float) -> float:
    """log of |Lambda|^(1/2) tau^-L exp(Theta' Lambda Theta / 2), unnormalized."""
    L = ss.moment.shape[0]
    C = np.linalg.cholesky(ss.precision)
    half = solve_triangular(C, ss.moment, lower=True, check_finite=False)
    return float(-np.sum(np.log(np.diag(C))) - L * math.log(tau)
                 + 0.5 * (half @ half))


def draw_leaf_values(ss: LeafSuffStats, rng: np.random.Generator) -> np.ndarray:
    """One draw from Normal(Lambda Theta, Lambda)."""
    C = np.linalg.cholesky(ss.precision)
    half = solve_triangular(C, ss.moment, lower=True, check_finite=False)
    shocked = half + rng.standard_normal(half.shape[0])
    return solve_triangular(C, shocked, trans="T", lower=True, check_finite=False)


def _assemble_stats(assign, L, r, xj, ws, inv_sig2, inv_tau2):
    """(Lambda^-1, Theta), with Lambda^-1 as a bare diagonal when rho = 0."""
    if xj is None:
        q = np.bincount(assign, minlength=L).astype(np.float64)
        u = np.bincount(assign, weights=r, minlength=L)
    else:
        q = np.bincount(assign, weights=xj * xj, minlength=L)
        u = np.bincount(assign, weights=xj * r, minlength=L)
    if ws.rho == 0.0:
        return inv_tau2 + inv_sig2 * q, inv_sig2 * u

    flat = ws.subject_index * L + assign
    if xj is None:
        S = np.bincount(flat, minlength=ws.n_subjects * L).astype(np.float64)
    else:
        S = np.bincount(flat, weights=xj, minlength=ws.n_subjects * L)
    S = S.reshape(ws.n_subjects, L)
    rsum = np.bincount(ws.subject_index, weights=r, minlength=ws.n_subjects)
    P = S.T @ (S * (ws.b * inv_sig2)[:, None])
    diag = np.diag_indices(L)
    P[diag] += inv_tau2 + (ws.a * inv_sig2) * q
    moment = inv_sig2 * (ws.a * u + S.T @ (ws.b * rsum))
    return P, moment


def _prep_marginal(mat, moment, log_tau, L):
    """(log marginal, draw context) for either stats representation."""
    if mat.ndim == 1:
        logm = (-0.5 * float(np.sum(np.log(mat))) - L * log_tau
                + 0.5 * float(np.sum(moment * moment / mat)))
        return logm, (mat, moment)
    C = np.linalg.cholesky(mat)
    half = solve_triangular(C, moment, lower=True, check_finite=False)
    logm = (-float(np.sum(np.log(np.diag(C)))) - L * log_tau
            + 0.5 * float(half @ half))
    return logm, (C, half)


def _draw_from_context(ctx, diagonal: bool, rng) -> np.ndarray:
    if diagonal:
        d, moment = ctx
        return moment / d + rng.standard_normal(d.shape[0]) / np.sqrt(d)
    C, half = ctx
    shocked = half + rng.standard_normal(half.shape[0])
    return solve_triangular(C, shocked, trans="T", lower=True, check_finite=False)


# ----------------------------------------------------------------------
# per-parameter updates


def update_tree(state: ChainState, j: int, m: int, ws: SamplerWorkspace,
                hyper: Hyperparameters, rng: np.random.Generator) -> bool:
    """One MH grow/prune step plus a fresh jump draw for tree (j, m).

    The jump vector is redrawn from its exact conditional whether or not the
    structural move is accepted.  Returns the acceptance flag.
    """
    rt = state.ensembles[j][m]
    structure = rt.structure
    assign = state.leaf_assign[j][m]
    L = rt.jumps.shape[0]
    xj = None if j == 0 else ws.x0[:, j]
    contrib = rt.jumps[assign]
    r = state.full_residuals + (contrib if xj is None else xj * contrib)

    inv_sig2 = 1.0 / (state.sigma * state.sigma)
    inv_tau2 = float(ws.inv_jump_sd2[j])
    log_tau = float(ws.log_jump_sd[j])
    theta = state.sparsity[j].split_probs
    diagonal = ws.rho == 0.0

    state.tree_proposals += 1
    if L == 1 or rng.random() < 0.5:
        prop = grow_proposal(structure, theta, rng, ws.cutpoint_grid,
                             hyper.max_depth)
    else:
        prop = prune_proposal(structure, theta, rng, ws.cutpoint_grid)

    new_assign = None
    if prop is not None:
        new_assign = _remap_assignments(assign, prop, ws, hyper.min_leaf_obs)
        if new_assign is None:
            prop = None

    mat, moment = _assemble_stats(assign, L, r, xj, ws, inv_sig2, inv_tau2)
    logm_cur, ctx_cur = _prep_marginal(mat, moment, log_tau, L)

    accepted = False
    if prop is not None:
        L_new = L + 1 if prop.kind == "grow" else L - 1
        mat_n, moment_n = _assemble_stats(new_assign, L_new, r, xj, ws,
                                          inv_sig2, inv_tau2)
        logm_new, ctx_new = _prep_marginal(mat_n, moment_n, log_tau, L_new)
        log_q, log_1mq = split_log_tables(hyper.split_prior, hyper.max_depth)
        d = prop.node_depth
        delta_struct = log_q[d] + 2.0 * log_1mq[d + 1] - log_1mq[d]
        if prop.kind == "prune":
            delta_struct = -delta_struct
        log_acc = ((logm_new - logm_cur) + delta_struct
                   + (prop.log_move_reverse - prop.log_move_forward))
        u = rng.random()
        if log_acc >= 0.0 or (u > 0.0 and math.log(u) < log_acc):
            accepted = True

    if accepted:
        structure = prop.tree
        assign = new_assign
        ctx, L = ctx_new, L_new
        state.rule_counts[j, prop.axis] += 1 if prop.kind == "grow" else -1
        state.tree_accepts += 1
    else:
        ctx = ctx_cur

    mu = _draw_from_context(ctx, diagonal, rng)
    state.ensembles[j][m] = RegressionTree(structure, mu)
    state.leaf_assign[j][m] = assign
    fit = mu[assign]
    state.full_residuals = r - (fit if xj is None else xj * fit)
    return accepted


def _remap_assignments(assign, prop, ws, min_leaf_obs):
    """O(N) leaf-rank remap for a proposal; None if a new leaf is too empty.

    Pre-order ranks make both directions pure shifts: a grow splits rank k
    into (k, k+1), a prune collapses (k, k+1) onto k.
    """
    k = prop.leaf_rank
    if prop.kind == "grow":
        new = assign + (assign > k)
        rows = np.nonzero(assign == k)[0]
        right = ws.z[rows, prop.axis] >= prop.cut
        n_right = int(right.sum())
        if min_leaf_obs > 0 and min(rows.size - n_right, n_right) < min_leaf_obs:
            return None
        new[rows[right]] = k + 1
        return new
    return assign - (assign > k)


def sigma_log_acceptance(sigma: float, proposed: float, df: float) -> float:
    """Log MH acceptance for the noise-scale move, capped at 0."""
    raw = (-0.5 * (df + 1.0) * (math.log(df + proposed * proposed)
                                - math.log(df + sigma * sigma))
           + 3.0 * (math.log(proposed) - math.log(sigma)))
    return min(0.0, raw)


def sigma_acceptance_prob(sigma: float, proposed: float, df: float) -> float:
    """min(1, ((df+s~^2)/(df+s^2))^(-(1+df)/2) * (s~/s)^3)."""
    return math.exp(sigma_log_acceptance(sigma, proposed, df))


def update_sigma(state: ChainState, ws: SamplerWorkspace,
                 hyper: Hyperparameters, rng: np.random.Generator) -> bool:
    """MH step for sigma with an inverse-gamma independence proposal.

    The proposal density over sigma is proportional to
    sigma^-(N+3) exp(-S / (2 sigma^2)), i.e. sigma^2 ~ InvGamma(N/2 + 1, S/2)
    with S the Omega-weighted residual sum of squares.  Together with the
    closed-form acceptance this leaves the half-t-times-likelihood
    conditional exactly invariant.
    """
    res = state.full_residuals
    if ws.rho == 0.0:
        S = float(res @ res)
    else:
        rs = np.bincount(ws.subject_index, weights=res, minlength=ws.n_subjects)
        S = float(ws.a * (res @ res) + ws.b @ (rs * rs))
    N = res.shape[0]
    gamma_draw = rng.standard_gamma(0.5 * N + 1.0)
    proposed = math.sqrt(0.5 * S / gamma_draw)
    state.sigma_proposals += 1
    log_alpha = sigma_log_acceptance(state.sigma, proposed, hyper.sigma_df)
    u = rng.random()
    if log_alpha >= 0.0 or (u > 0.0 and math.log(u) < log_alpha):
        state.sigma = proposed
        state.sigma_accepts += 1
        return True
    return False


def update_split_probs(state: ChainState, j: int, ws: SamplerWorkspace,
                       rng: np.random.Generator) -> None:
    """Conjugate Dirichlet update of ensemble j's modifier weights."""
    sp = state.sparsity[j]
    alpha = sp.concentration / ws.n_modifiers + state.rule_counts[j]
    sp.split_probs = guarded_dirichlet(alpha, rng)


def update_concentration(state: ChainState, j: int, ws: SamplerWorkspace,
                         rng: np.random.Generator) -> None:
    """Grid-Gibbs update of ensemble j's Dirichlet concentration."""
    sp = state.sparsity[j]
    logw = concentration_posterior_log_weights(sp.split_probs, ws.n_modifiers)
    p = np.exp(logw - logw.max())
    cum = np.cumsum(p)
    k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    k = min(k, len(cum) - 1)
    sp.concentration = concentration_from_index(k, ws.n_modifiers)
    sp.concentration_index = k


def gibbs_sweep(state: ChainState, ws: SamplerWorkspace,
                hyper: Hyperparameters, rng: np.random.Generator) -> None:
    """One full sweep: all trees of every ensemble, sigma, then sparsity."""
    for j in range(ws.n_ensembles):
        for m in range(hyper.n_trees):
            update_tree(state, j, m, ws, hyper, rng)
    update_sigma(state, ws, hyper, rng)
    for j in range(ws.n_ensembles):
        update_split_probs(state, j, ws, rng)
        update_concentration(state, j, ws, rng)


# ----------------------------------------------------------------------
# chain driver


def run_chain(data: PanelDataset, hyper: Hyperparameters,
              rng: np.random.Generator | int | None = None,
              chain_id: int = 0) -> PosteriorDraws:
    """Run one chain and return its post-burn-in draws.

    Residuals are rebuilt from scratch periodically to stop floating-point
    drift from the incremental updates; non-finite state aborts the run.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    ws = SamplerWorkspace.build(data, hyper)
    state = init_chain_state(ws, hyper)
    records: list[DrawRecord] = []
    for sweep in range(hyper.n_iter):
        gibbs_sweep(state, ws, hyper, rng)
        if not math.isfinite(state.sigma):
            raise NumericalError(f"sigma became non-finite at sweep {sweep}")
        if (sweep + 1) % _RESIDUAL_REFRESH_EVERY == 0 \
                or sweep + 1 == hyper.n_iter:
            state.full_residuals = recompute_full_residuals(state, ws,
                                                            use_cache=True)
            if not np.all(np.isfinite(state.full_residuals)):
                raise NumericalError(f"non-finite residuals at sweep {sweep}")
        if sweep >= hyper.n_burn:
            records.append(_snapshot(state))

    meta = {
        "schema_version": SCHEMA_VERSION,
        "p": data.n_covariates,
        "R": data.n_modifiers,
        "n_trees": hyper.n_trees,
        "y_mean": data.y_mean,
        "y_sd": data.y_sd,
        "z_min": data.z_min.tolist(),
        "z_max": data.z_max.tolist(),
        "x_names": list(data.x_names),
        "z_names": list(data.z_names),
        "hyperparameters": hyper.to_dict(),
        "config_hash": config_hash(hyper.to_dict()),
        "dataset_fingerprint": data.fingerprint(),
        "chains": [{
            "chain_id": chain_id,
            "tree_accept_rate": state.tree_accepts / max(state.tree_proposals, 1),
            "sigma_accept_rate": state.sigma_accepts / max(state.sigma_proposals, 1),
            "n_kept": len(records),
        }],
    }
    return PosteriorDraws(records, meta)


def _snapshot(state: ChainState) -> DrawRecord:
    return DrawRecord(
        forests=[PackedForest.from_trees(ens) for ens in state.ensembles],
        sigma=state.sigma,
        split_probs=np.array([sp.split_probs for sp in state.sparsity]),
        concentrations=np.array([sp.concentration for sp in state.sparsity]),
        concentration_index=np.array(
            [sp.concentration_index for sp in state.sparsity], dtype=np.int64),
        split_count_matrix=state.rule_counts.copy(),
    )


def fit_posterior(data: PanelDataset, hyper: Hyperparameters,
                  n_jobs: int = 1) -> PosteriorDraws:
    """Run hyper.n_chains chains and merge their draws.

    Chain rng streams are spawned from one seed sequence, so results are
    bit-identical whatever the parallelism; with seed None the drawn entropy
    is recorded for provenance.
    """
    root = np.random.SeedSequence(hyper.seed)
    children = root.spawn(hyper.n_chains)
    if n_jobs == 1 or hyper.n_chains == 1:
        parts = [run_chain(data, hyper, np.random.default_rng(child), i)
                 for i, child in enumerate(children)]
    else:
        from joblib import Parallel, delayed
        parts = Parallel(n_jobs=n_jobs)(
            delayed(run_chain)(data, hyper, np.random.default_rng(child), i)
            for i, child in enumerate(children))
    merged = PosteriorDraws.merge(parts)
    merged.meta["seeds"] = {"seed": hyper.seed, "entropy": int(root.entropy)}
    return merged


def ensemble_split_counts(state: ChainState, j: int, n_modifiers: int) -> np.ndarray:
    """Rule counts recomputed by walking ensemble j; oracle for the cache."""
    return split_counts(state.ensembles[j], n_modifiers)
